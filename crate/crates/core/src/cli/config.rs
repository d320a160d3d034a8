//! Run configuration, its TOML form, and problem selection.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::basis::Scheme;
use crate::models::{
    cartpole_ocp, double_integrator_min_time_ocp, pendulum_ocp, BenchmarkParams, CartPole, CartPoleParams,
    DoubleIntegrator, OcpDefinition, Pendulum, PendulumParams, SecondOrderModel,
};
use crate::nlp::{HessianMode, SolveOptions};

use super::CliError;

/// Which optimal control problem to run.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Pendulum,
    CartPole,
    /// A problem file, see [`CustomProblem`].
    Custom(PathBuf),
}

impl FromStr for ProblemSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pendulum" => Ok(Self::Pendulum),
            "cartpole" => Ok(Self::CartPole),
            _ => match s.strip_prefix("custom:") {
                Some(path) if !path.is_empty() => Ok(Self::Custom(PathBuf::from(path))),
                _ => Err(format!(
                    "expected pendulum, cartpole or custom:PATH, got '{s}'"
                )),
            },
        }
    }
}

impl fmt::Display for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Pendulum => f.write_str("pendulum"),
            Self::CartPole => f.write_str("cartpole"),
            Self::Custom(p) => write!(f, "custom:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    Lg,
    Lg2,
    Both,
}

impl SchemeChoice {
    pub fn schemes(self) -> Vec<Scheme> {
        match self {
            Self::Lg => vec![Scheme::Lg],
            Self::Lg2 => vec![Scheme::Lg2],
            Self::Both => vec![Scheme::Lg, Scheme::Lg2],
        }
    }
}

impl FromStr for SchemeChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lg" => Ok(Self::Lg),
            "lg2" => Ok(Self::Lg2),
            "both" => Ok(Self::Both),
            _ => Err(format!("expected lg, lg2 or both, got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(format!("expected csv or json, got '{s}'")),
        }
    }
}

/// Parses `"12"`, `"6,10,14"` or an inclusive range `"6..24"` with an
/// optional step, `"6..24:2"`.
pub fn parse_counts(s: &str) -> Result<Vec<usize>, String> {
    let s = s.trim();
    let int = |x: &str| -> Result<usize, String> {
        x.trim()
            .parse::<usize>()
            .map_err(|_| format!("'{}' is not a non-negative integer", x.trim()))
    };
    let counts = if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (int(hi)?, int(step)?),
            None => (int(rest)?, 1),
        };
        let lo = int(lo)?;
        if step == 0 {
            return Err("range step must be positive".into());
        }
        if hi < lo {
            return Err(format!("empty range {lo}..{hi}"));
        }
        (lo..=hi).step_by(step).collect()
    } else {
        s.split(',').map(int).collect::<Result<Vec<_>, _>>()?
    };
    if counts.is_empty() {
        return Err("no collocation counts given".into());
    }
    if counts.contains(&0) {
        return Err("collocation count must be at least 1, got 0".into());
    }
    Ok(counts)
}

fn ser_display<S: Serializer, T: fmt::Display>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn de_problem<'de, D: Deserializer<'de>>(d: D) -> Result<ProblemSpec, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

/// `n` may be written as an integer, an array or a range string.
fn de_counts<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        One(usize),
        Many(Vec<usize>),
        Text(String),
    }
    let counts = match Raw::deserialize(d)? {
        Raw::One(n) => vec![n],
        Raw::Many(v) => v,
        Raw::Text(s) => return parse_counts(&s).map_err(serde::de::Error::custom),
    };
    if counts.is_empty() || counts.contains(&0) {
        return Err(serde::de::Error::custom("collocation count must be at least 1"));
    }
    Ok(counts)
}

/// Settings shared by `solve` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(serialize_with = "ser_display", deserialize_with = "de_problem")]
    pub problem: ProblemSpec,
    pub scheme: SchemeChoice,
    #[serde(deserialize_with = "de_counts")]
    pub n: Vec<usize>,
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iter: usize,
    pub hessian: HessianMode,
    pub out: PathBuf,
    pub format: Format,
    /// Reserved; every component is deterministic.
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn new(problem: ProblemSpec, n: Vec<usize>, format: Format) -> Self {
        let d = SolveOptions::default();
        Self {
            problem,
            scheme: SchemeChoice::Both,
            n,
            feas_tol: d.feas_tol,
            opt_tol: d.opt_tol,
            max_iter: d.max_iter,
            hessian: d.hessian,
            out: PathBuf::from("lgcol-out"),
            format,
            seed: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let c: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always serializable")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n.is_empty() {
            return Err(CliError::Config("N: no collocation counts given".into()));
        }
        if self.n.contains(&0) {
            return Err(CliError::Config("N: collocation count must be at least 1, got 0".into()));
        }
        for (field, v) in [("feas_tol", self.feas_tol), ("opt_tol", self.opt_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("{field}: must be positive, got {v}")));
            }
        }
        if self.max_iter == 0 {
            return Err(CliError::Config("max_iter: must be at least 1".into()));
        }
        Ok(())
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            feas_tol: self.feas_tol,
            opt_tol: self.opt_tol,
            max_iter: self.max_iter,
            initial_guess: None,
            hessian: self.hessian,
        }
    }
}

/// Base problem named in a custom problem file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustomBase {
    Pendulum,
    Cartpole,
    DoubleIntegrator,
}

/// A benchmark with its parameters replaced, e.g.
///
/// ```toml
/// base = "pendulum"
/// [pendulum]
/// mass = 1.0
/// length = 0.5
/// gravity = 9.81
/// max_torque = 4.0
/// min_final_time = 0.1
/// max_final_time = 10.0
/// ```
///
/// Tables not given fall back to the shipped benchmark parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomProblem {
    pub base: CustomBase,
    pub pendulum: Option<PendulumParams>,
    pub cartpole: Option<CartPoleParams>,
    /// Transfer distance of the double integrator.
    pub distance: Option<f64>,
}

impl CustomProblem {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("problem file {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("problem file {}: {e}", path.display())))
    }

    fn params(&self) -> Result<BenchmarkParams, CliError> {
        let embedded = BenchmarkParams::embedded();
        let p = BenchmarkParams {
            version: embedded.version,
            pendulum: self.pendulum.unwrap_or(embedded.pendulum),
            cartpole: self.cartpole.unwrap_or(embedded.cartpole),
        };
        p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(p)
    }

    fn distance(&self) -> Result<f64, CliError> {
        let d = self.distance.unwrap_or(1.0);
        if d > 0.0 && d.is_finite() {
            Ok(d)
        } else {
            Err(CliError::Config(format!("distance: must be positive, got {d}")))
        }
    }
}

impl ProblemSpec {
    pub fn ocp(&self) -> Result<OcpDefinition, CliError> {
        let params = BenchmarkParams::embedded();
        match self {
            Self::Pendulum => Ok(pendulum_ocp(params.pendulum)),
            Self::CartPole => Ok(cartpole_ocp(params.cartpole)),
            Self::Custom(path) => {
                let c = CustomProblem::load(path)?;
                let p = c.params()?;
                Ok(match c.base {
                    CustomBase::Pendulum => pendulum_ocp(p.pendulum),
                    CustomBase::Cartpole => cartpole_ocp(p.cartpole),
                    CustomBase::DoubleIntegrator => double_integrator_min_time_ocp(c.distance()?),
                })
            }
        }
    }

    pub fn model(&self) -> Result<Arc<dyn SecondOrderModel>, CliError> {
        let params = BenchmarkParams::embedded();
        match self {
            Self::Pendulum => Ok(Arc::new(Pendulum::new(params.pendulum))),
            Self::CartPole => Ok(Arc::new(CartPole::new(params.cartpole))),
            Self::Custom(path) => {
                let c = CustomProblem::load(path)?;
                let p = c.params()?;
                Ok(match c.base {
                    CustomBase::Pendulum => Arc::new(Pendulum::new(p.pendulum)),
                    CustomBase::Cartpole => Arc::new(CartPole::new(p.cartpole)),
                    CustomBase::DoubleIntegrator => Arc::new(DoubleIntegrator),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_forms() {
        assert_eq!(parse_counts("12").unwrap(), vec![12]);
        assert_eq!(parse_counts("6, 10,14").unwrap(), vec![6, 10, 14]);
        assert_eq!(parse_counts("6..24:2").unwrap().len(), 10);
        assert_eq!(parse_counts("3..5").unwrap(), vec![3, 4, 5]);
        assert!(parse_counts("0").is_err());
        assert!(parse_counts("5..3").is_err());
        assert!(parse_counts("4..8:0").is_err());
        assert!(parse_counts("x").is_err());
    }

    #[test]
    fn problem_names() {
        assert_eq!("pendulum".parse::<ProblemSpec>().unwrap(), ProblemSpec::Pendulum);
        assert_eq!(
            "custom:a/b.toml".parse::<ProblemSpec>().unwrap(),
            ProblemSpec::Custom("a/b.toml".into())
        );
        assert!("custom:".parse::<ProblemSpec>().is_err());
        assert!("rabbit".parse::<ProblemSpec>().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::new(ProblemSpec::Custom("p.toml".into()), vec![6, 8], Format::Csv);
        c.scheme = SchemeChoice::Lg2;
        c.feas_tol = 1e-9;
        c.seed = Some(7);
        let text = c.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn range_string_normalizes_to_list() {
        let text = RunConfig::new(ProblemSpec::Pendulum, vec![1], Format::Json)
            .to_toml()
            .replace("n = [1]", "n = \"4..8:2\"");
        let c = RunConfig::from_toml(&text).unwrap();
        assert_eq!(c.n, vec![4, 6, 8]);
        assert!(c.to_toml().contains("n = [4, 6, 8]"));
    }

    #[test]
    fn zero_count_names_the_field() {
        let mut c = RunConfig::new(ProblemSpec::Pendulum, vec![0], Format::Json);
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("N"), "{e}");
        c.n = vec![3];
        c.opt_tol = -1.0;
        assert!(c.validate().unwrap_err().to_string().contains("opt_tol"));
    }
}
