//! Second-order dynamics, their first-order rewrite, and the benchmark
//! optimal control problems.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what}[{index}]: lower bound {lo} exceeds upper bound {hi}")]
    InvalidBound {
        what: &'static str,
        index: usize,
        lo: f64,
        hi: f64,
    },
    #[error("invalid final time: {0}")]
    InvalidFinalTime(String),
    #[error("invalid model parameters: {0}")]
    Config(String),
}

/// Dynamics of the form `q'' = g(q, v, u, t)` with `v = q'`.
pub trait SecondOrderModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Configuration dimension `n_q`.
    fn n_q(&self) -> usize;

    /// Control dimension `n_u`.
    fn n_u(&self) -> usize;

    /// Writes `g(q, v, u, t)` into `out` (length `n_q`).
    fn accel(&self, q: &[f64], v: &[f64], u: &[f64], t: f64, out: &mut [f64]);

    /// Physical unit of each configuration coordinate.
    fn coordinate_units(&self) -> Vec<&'static str>;

    fn accel_vec(&self, q: &[f64], v: &[f64], u: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_q()];
        self.accel(q, v, u, t, &mut out);
        out
    }
}

/// The first-order vector field `x' = f(x, u, t)` with `x = (q, v)`.
#[derive(Debug, Clone)]
pub struct FirstOrderField {
    model: Arc<dyn SecondOrderModel>,
}

pub fn first_order_wrap(model: Arc<dyn SecondOrderModel>) -> FirstOrderField {
    FirstOrderField { model }
}

impl FirstOrderField {
    pub fn state_dim(&self) -> usize {
        2 * self.model.n_q()
    }

    pub fn model(&self) -> &Arc<dyn SecondOrderModel> {
        &self.model
    }

    pub fn eval(&self, x: &[f64], u: &[f64], t: f64, out: &mut [f64]) {
        let nq = self.model.n_q();
        let (q, v) = x.split_at(nq);
        let (dq, dv) = out.split_at_mut(nq);
        dq.copy_from_slice(v);
        self.model.accel(q, v, u, t, dv);
    }

    pub fn eval_vec(&self, x: &[f64], u: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.eval(x, u, t, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub max_torque: f64,
    pub min_final_time: f64,
    pub max_final_time: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            max_torque: 2.5,
            min_final_time: 0.1,
            max_final_time: 10.0,
        }
    }
}

/// Torque-driven single link; `q = 0` hangs at rest, `q = pi` is upright.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pendulum {
    pub params: PendulumParams,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Self {
        Self { params }
    }
}

pub fn pendulum_accel(p: &PendulumParams, q: f64, _v: f64, u: f64) -> f64 {
    let ml = p.mass * p.length;
    (u - ml * p.gravity * q.sin()) / (ml * p.length)
}

impl SecondOrderModel for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }

    fn n_q(&self) -> usize {
        1
    }

    fn n_u(&self) -> usize {
        1
    }

    fn accel(&self, q: &[f64], v: &[f64], u: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = pendulum_accel(&self.params, q[0], v[0], u[0]);
    }

    fn coordinate_units(&self) -> Vec<&'static str> {
        vec!["rad"]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    /// Cart travel required by the swing-up.
    pub distance: f64,
    pub duration: f64,
    pub max_force: f64,
    pub track_limit: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.3,
            pole_length: 0.5,
            gravity: 9.81,
            distance: 1.0,
            duration: 2.0,
            max_force: 20.0,
            track_limit: 2.0,
        }
    }
}

/// Cart on a track with a free pole; `q = (cart position, pole angle)`,
/// pole angle 0 hanging down.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPole {
    pub params: CartPoleParams,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Self {
        Self { params }
    }
}

pub fn cartpole_accel(p: &CartPoleParams, q: [f64; 2], v: [f64; 2], u: f64) -> [f64; 2] {
    let (m1, m2, l, g) = (p.cart_mass, p.pole_mass, p.pole_length, p.gravity);
    let (s, c) = q[1].sin_cos();
    let w2 = v[1] * v[1];
    let den = m1 + m2 * (1.0 - c * c);
    let ddx = (l * m2 * s * w2 + u + m2 * g * c * s) / den;
    let ddth = -(l * m2 * c * s * w2 + u * c + (m1 + m2) * g * s) / (l * den);
    [ddx, ddth]
}

impl SecondOrderModel for CartPole {
    fn name(&self) -> &str {
        "cartpole"
    }

    fn n_q(&self) -> usize {
        2
    }

    fn n_u(&self) -> usize {
        1
    }

    fn accel(&self, q: &[f64], v: &[f64], u: &[f64], _t: f64, out: &mut [f64]) {
        let a = cartpole_accel(&self.params, [q[0], q[1]], [v[0], v[1]], u[0]);
        out.copy_from_slice(&a);
    }

    fn coordinate_units(&self) -> Vec<&'static str> {
        vec!["m", "rad"]
    }
}

/// `q'' = u`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DoubleIntegrator;

impl SecondOrderModel for DoubleIntegrator {
    fn name(&self) -> &str {
        "double_integrator"
    }

    fn n_q(&self) -> usize {
        1
    }

    fn n_u(&self) -> usize {
        1
    }

    fn accel(&self, _q: &[f64], _v: &[f64], u: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = u[0];
    }

    fn coordinate_units(&self) -> Vec<&'static str> {
        vec!["m"]
    }
}

/// Forced linear oscillator `q'' = -omega^2 q + u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Oscillator {
    pub omega: f64,
}

impl SecondOrderModel for Oscillator {
    fn name(&self) -> &str {
        "oscillator"
    }

    fn n_q(&self) -> usize {
        1
    }

    fn n_u(&self) -> usize {
        1
    }

    fn accel(&self, q: &[f64], _v: &[f64], u: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = -self.omega * self.omega * q[0] + u[0];
    }

    fn coordinate_units(&self) -> Vec<&'static str> {
        vec!["m"]
    }
}

/// Closed interval; infinite ends mean unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub const FREE: Bound = Bound {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn symmetric(limit: f64) -> Self {
        Self {
            lo: -limit,
            hi: limit,
        }
    }

    pub fn is_free(&self) -> bool {
        self.lo == f64::NEG_INFINITY && self.hi == f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FinalTime {
    Fixed(f64),
    Free { lo: f64, hi: f64 },
}

impl FinalTime {
    pub fn is_free(&self) -> bool {
        matches!(self, FinalTime::Free { .. })
    }
}

pub type CostFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type PathFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type BoundaryFn = Arc<dyn Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync>;

/// Running cost `L(x, u)`.
#[derive(Clone)]
pub enum Cost {
    /// `L = 1`, so the objective is the final time itself.
    FinalTime,
    Integrand(CostFn),
}

impl Cost {
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            Cost::FinalTime => 1.0,
            Cost::Integrand(f) => f(x, u),
        }
    }
}

impl fmt::Debug for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::FinalTime => f.write_str("FinalTime"),
            Cost::Integrand(_) => f.write_str("Integrand(..)"),
        }
    }
}

/// `h(x, u) <= 0`.
#[derive(Clone)]
pub struct PathConstraint {
    pub len: usize,
    pub eval: PathFn,
}

/// `b(x(0), x(t_f), t_f) = 0`.
#[derive(Clone)]
pub struct BoundaryConstraint {
    pub len: usize,
    pub eval: BoundaryFn,
}

impl BoundaryConstraint {
    /// Pins both endpoint states.
    pub fn fixed_endpoints(x0: Vec<f64>, xf: Vec<f64>) -> Self {
        let n = x0.len();
        assert_eq!(n, xf.len());
        Self {
            len: 2 * n,
            eval: Arc::new(move |a, b, _tf, out| {
                for i in 0..n {
                    out[i] = a[i] - x0[i];
                    out[n + i] = b[i] - xf[i];
                }
            }),
        }
    }
}

impl fmt::Debug for PathConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PathConstraint").field("len", &self.len).finish()
    }
}

impl fmt::Debug for BoundaryConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryConstraint")
            .field("len", &self.len)
            .finish()
    }
}

/// A second-order optimal control problem on `[0, t_f]`.
#[derive(Debug, Clone)]
pub struct OcpDefinition {
    pub name: String,
    pub model: Arc<dyn SecondOrderModel>,
    pub cost: Cost,
    pub path: Option<PathConstraint>,
    pub boundary: BoundaryConstraint,
    /// One per control component.
    pub control_bounds: Vec<Bound>,
    /// One per state component, `(q, v)` order.
    pub state_bounds: Vec<Bound>,
    pub final_time: FinalTime,
    /// Configurations the initial guess interpolates between.
    pub guess_start: Vec<f64>,
    pub guess_end: Vec<f64>,
}

impl OcpDefinition {
    /// Problem with unbounded states and controls and a zero guess.
    pub fn new(
        name: impl Into<String>,
        model: Arc<dyn SecondOrderModel>,
        cost: Cost,
        boundary: BoundaryConstraint,
        final_time: FinalTime,
    ) -> Self {
        let nq = model.n_q();
        let nu = model.n_u();
        Self {
            name: name.into(),
            model,
            cost,
            path: None,
            boundary,
            control_bounds: vec![Bound::FREE; nu],
            state_bounds: vec![Bound::FREE; 2 * nq],
            final_time,
            guess_start: vec![0.0; nq],
            guess_end: vec![0.0; nq],
        }
    }

    pub fn with_control_bounds(mut self, bounds: Vec<Bound>) -> Self {
        self.control_bounds = bounds;
        self
    }

    pub fn with_state_bounds(mut self, bounds: Vec<Bound>) -> Self {
        self.state_bounds = bounds;
        self
    }

    pub fn with_path(mut self, path: PathConstraint) -> Self {
        self.path = Some(path);
        self
    }

    pub fn with_guess(mut self, start: Vec<f64>, end: Vec<f64>) -> Self {
        self.guess_start = start;
        self.guess_end = end;
        self
    }

    pub fn n_q(&self) -> usize {
        self.model.n_q()
    }

    pub fn n_u(&self) -> usize {
        self.model.n_u()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let nq = self.n_q();
        let nu = self.n_u();
        let dims = [
            ("control_bounds", nu, self.control_bounds.len()),
            ("state_bounds", 2 * nq, self.state_bounds.len()),
            ("guess_start", nq, self.guess_start.len()),
            ("guess_end", nq, self.guess_end.len()),
        ];
        for (what, expected, got) in dims {
            if expected != got {
                return Err(ModelError::DimensionMismatch {
                    what,
                    expected,
                    got,
                });
            }
        }
        for (what, bounds) in [
            ("control_bounds", &self.control_bounds),
            ("state_bounds", &self.state_bounds),
        ] {
            for (index, b) in bounds.iter().enumerate() {
                if b.lo.is_nan() || b.hi.is_nan() || b.lo > b.hi {
                    return Err(ModelError::InvalidBound {
                        what,
                        index,
                        lo: b.lo,
                        hi: b.hi,
                    });
                }
            }
        }
        match self.final_time {
            FinalTime::Fixed(tf) if !(tf > 0.0 && tf.is_finite()) => Err(
                ModelError::InvalidFinalTime(format!("fixed t_f must be positive, got {tf}")),
            ),
            FinalTime::Free { lo, hi } if !(lo > 0.0 && lo <= hi && hi.is_finite()) => {
                Err(ModelError::InvalidFinalTime(format!(
                    "free t_f needs 0 < lo <= hi < inf, got [{lo}, {hi}]"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Minimum-time swing-up from hanging rest to upright rest.
pub fn pendulum_ocp(params: PendulumParams) -> OcpDefinition {
    let pi = std::f64::consts::PI;
    OcpDefinition::new(
        "pendulum",
        Arc::new(Pendulum::new(params)),
        Cost::FinalTime,
        BoundaryConstraint::fixed_endpoints(vec![0.0, 0.0], vec![pi, 0.0]),
        FinalTime::Free {
            lo: params.min_final_time,
            hi: params.max_final_time,
        },
    )
    .with_control_bounds(vec![Bound::symmetric(params.max_torque)])
    .with_guess(vec![0.0], vec![pi])
}

/// Fixed-time swing-up minimizing the integral of `u^2`; the cart ends at
/// rest a distance `d` away with the pole inverted.
pub fn cartpole_ocp(params: CartPoleParams) -> OcpDefinition {
    let pi = std::f64::consts::PI;
    OcpDefinition::new(
        "cartpole",
        Arc::new(CartPole::new(params)),
        Cost::Integrand(Arc::new(|_x: &[f64], u: &[f64]| u[0] * u[0])),
        BoundaryConstraint::fixed_endpoints(
            vec![0.0, 0.0, 0.0, 0.0],
            vec![params.distance, pi, 0.0, 0.0],
        ),
        FinalTime::Fixed(params.duration),
    )
    .with_control_bounds(vec![Bound::symmetric(params.max_force)])
    .with_state_bounds(vec![
        Bound::symmetric(params.track_limit),
        Bound::FREE,
        Bound::FREE,
        Bound::FREE,
    ])
    .with_guess(vec![0.0, 0.0], vec![params.distance, pi])
}

/// Rest-to-rest transfer over `distance` with `|u| <= 1` in minimum time.
/// The continuous optimum is bang-bang with `t_f = 2 sqrt(distance)`.
pub fn double_integrator_min_time_ocp(distance: f64) -> OcpDefinition {
    OcpDefinition::new(
        "double_integrator",
        Arc::new(DoubleIntegrator),
        Cost::FinalTime,
        BoundaryConstraint::fixed_endpoints(vec![0.0, 0.0], vec![distance, 0.0]),
        FinalTime::Free { lo: 0.1, hi: 10.0 },
    )
    .with_control_bounds(vec![Bound::symmetric(1.0)])
    .with_guess(vec![0.0], vec![distance])
}

/// Versioned benchmark parameter file shipped with the crate.
pub const BENCHMARKS_TOML: &str = include_str!("../config/benchmarks.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkParams {
    pub version: u32,
    pub pendulum: PendulumParams,
    pub cartpole: CartPoleParams,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        Self {
            version: 1,
            pendulum: PendulumParams::default(),
            cartpole: CartPoleParams::default(),
        }
    }
}

impl BenchmarkParams {
    pub fn embedded() -> Self {
        Self::from_toml(BENCHMARKS_TOML).expect("embedded benchmark config is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let p: Self = toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let p = &self.pendulum;
        let c = &self.cartpole;
        let positive = [
            ("pendulum.mass", p.mass),
            ("pendulum.length", p.length),
            ("pendulum.max_torque", p.max_torque),
            ("pendulum.min_final_time", p.min_final_time),
            ("cartpole.cart_mass", c.cart_mass),
            ("cartpole.pole_mass", c.pole_mass),
            ("cartpole.pole_length", c.pole_length),
            ("cartpole.duration", c.duration),
            ("cartpole.max_force", c.max_force),
            ("cartpole.track_limit", c.track_limit),
        ];
        for (field, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::Config(format!(
                    "{field} must be positive and finite, got {value}"
                )));
            }
        }
        if p.max_final_time < p.min_final_time {
            return Err(ModelError::Config(
                "pendulum.max_final_time must be >= min_final_time".into(),
            ));
        }
        Ok(())
    }
}
