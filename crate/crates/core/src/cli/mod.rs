//! Command-line front end: `solve`, `sweep` and `ivp`.
//!
//! Every output file carries a schema string. Apart from wall-time
//! columns, outputs are byte-identical for identical configurations.
//!
//! Exit codes: 0 on success, 1 when a solve did not converge (outputs are
//! still written), 2 on configuration or expression errors.

mod config;
mod expr;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{eps1, eps2, error_report, solve_ocp, sweep, ErrorReport};
use crate::basis::Scheme;
use crate::ivp::{reference_integrate, solve_ivp_lg, solve_ivp_lg2, ControlFn, IvpError, IvpSpec};
use crate::models::OcpDefinition;
use crate::nlp::HessianMode;
use crate::transcription::Trajectory;

pub use config::{parse_counts, CustomBase, CustomProblem, Format, ProblemSpec, RunConfig, SchemeChoice};
pub use expr::{Expr, ExprError, Func};

pub const TRAJECTORY_SCHEMA: &str = "lgcol.trajectory/1";
pub const SUMMARY_SCHEMA: &str = "lgcol.summary/1";
pub const SWEEP_SCHEMA: &str = "lgcol.sweep/1";
pub const IVP_SCHEMA: &str = "lgcol.ivp/1";

/// Uniform samples written per trajectory.
pub const SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("control expression: {0}")]
    Expr(#[from] ExprError),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Ivp(#[from] IvpError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Expr(_) => 2,
            CliError::Io(_) | CliError::Ivp(_) => 1,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "lgcol", version, about = "Legendre-Gauss collocation for second-order optimal control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a benchmark and write trajectory samples and a summary.
    Solve(RunArgs),
    /// Solve for a range of collocation counts and tabulate the errors.
    Sweep(RunArgs),
    /// Collocate an initial value problem and compare with a reference integrator.
    Ivp(IvpArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// pendulum, cartpole or custom:PATH
    #[arg(long)]
    pub problem: Option<String>,
    /// lg, lg2 or both
    #[arg(long)]
    pub scheme: Option<String>,
    /// Collocation points: "12", "6,10,14" or "6..24:2"
    #[arg(long = "N", value_name = "N")]
    pub n: Option<String>,
    #[arg(long)]
    pub feas_tol: Option<f64>,
    #[arg(long)]
    pub opt_tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// finite_difference or bfgs
    #[arg(long)]
    pub hessian: Option<String>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv or json
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct IvpArgs {
    /// TOML IVP configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// pendulum, cartpole or custom:PATH
    #[arg(long)]
    pub problem: Option<String>,
    /// lg, lg2 or both
    #[arg(long)]
    pub scheme: Option<String>,
    /// Initial configuration, comma separated
    #[arg(long, allow_hyphen_values = true)]
    pub q0: Option<String>,
    /// Initial velocity, comma separated; zero by default
    #[arg(long, allow_hyphen_values = true)]
    pub v0: Option<String>,
    /// Control expression in t, once per control input
    #[arg(long = "u", allow_hyphen_values = true)]
    pub u: Vec<String>,
    #[arg(long)]
    pub tf: Option<f64>,
    #[arg(long = "N", value_name = "N")]
    pub n: Option<String>,
    /// Reference integrator tolerance
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
}

fn field<T: std::str::FromStr<Err = String>>(name: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|e| CliError::Config(format!("{name}: {e}")))
}

fn parse_hessian(s: &str) -> Result<HessianMode, CliError> {
    match s {
        "finite_difference" | "fd" => Ok(HessianMode::FiniteDifference),
        "bfgs" => Ok(HessianMode::Bfgs),
        _ => Err(CliError::Config(format!(
            "hessian: expected finite_difference or bfgs, got '{s}'"
        ))),
    }
}

fn read_config(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

impl RunArgs {
    /// Merges the configuration file, if any, with the flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_toml(&read_config(path)?)?,
            None => {
                let n = self
                    .n
                    .as_deref()
                    .ok_or_else(|| CliError::Config("N: required when no config file is given".into()))?;
                let n = parse_counts(n).map_err(|e| CliError::Config(format!("N: {e}")))?;
                RunConfig::new(ProblemSpec::Pendulum, n, Format::Json)
            }
        };
        if let Some(p) = &self.problem {
            c.problem = field("problem", p)?;
        }
        if let Some(s) = &self.scheme {
            c.scheme = field("scheme", s)?;
        }
        if let Some(n) = &self.n {
            c.n = parse_counts(n).map_err(|e| CliError::Config(format!("N: {e}")))?;
        }
        if let Some(v) = self.feas_tol {
            c.feas_tol = v;
        }
        if let Some(v) = self.opt_tol {
            c.opt_tol = v;
        }
        if let Some(v) = self.max_iter {
            c.max_iter = v;
        }
        if let Some(h) = &self.hessian {
            c.hessian = parse_hessian(h)?;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        if let Some(f) = &self.format {
            c.format = field("format", f)?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Settings of the `ivp` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvpConfig {
    pub problem: String,
    pub scheme: SchemeChoice,
    pub q0: Vec<f64>,
    pub v0: Option<Vec<f64>>,
    /// One expression per control input.
    pub u: Vec<String>,
    pub tf: f64,
    pub n: usize,
    pub tol: f64,
    pub out: PathBuf,
    pub format: Format,
}

fn parse_list(name: &str, s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("{name}: '{}' is not a number", x.trim())))
        })
        .collect()
}

impl IvpArgs {
    pub fn resolve(&self) -> Result<IvpConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => toml::from_str(&read_config(path)?).map_err(|e| CliError::Config(e.to_string()))?,
            None => IvpConfig {
                problem: "pendulum".into(),
                scheme: SchemeChoice::Lg2,
                q0: Vec::new(),
                v0: None,
                u: Vec::new(),
                tf: 0.0,
                n: 0,
                tol: 1e-12,
                out: PathBuf::from("lgcol-out"),
                format: Format::Json,
            },
        };
        if let Some(p) = &self.problem {
            c.problem = p.clone();
        }
        if let Some(s) = &self.scheme {
            c.scheme = field("scheme", s)?;
        }
        if let Some(q) = &self.q0 {
            c.q0 = parse_list("q0", q)?;
        }
        if let Some(v) = &self.v0 {
            c.v0 = Some(parse_list("v0", v)?);
        }
        if !self.u.is_empty() {
            c.u = self.u.clone();
        }
        if let Some(t) = self.tf {
            c.tf = t;
        }
        if let Some(n) = &self.n {
            c.n = n
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("N: '{n}' is not a positive integer")))?;
        }
        if let Some(t) = self.tol {
            c.tol = t;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        if let Some(f) = &self.format {
            c.format = field("format", f)?;
        }
        if c.n == 0 {
            return Err(CliError::Config("N: collocation count must be at least 1".into()));
        }
        if !(c.tf > 0.0 && c.tf.is_finite()) {
            return Err(CliError::Config(format!("tf: must be positive, got {}", c.tf)));
        }
        if !(1e-13..=1e-6).contains(&c.tol) {
            return Err(CliError::Config(format!("tol: must lie in [1e-13, 1e-6], got {}", c.tol)));
        }
        Ok(c)
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Solve(a) => a.resolve().and_then(|c| cmd_solve(&c)),
        Command::Sweep(a) => a.resolve().and_then(|c| cmd_sweep(&c)),
        Command::Ivp(a) => a.resolve().and_then(|c| cmd_ivp(&c)),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes `# comment` and then the CSV records.
fn write_csv(path: &Path, comment: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    writeln!(buf, "# {comment}").expect("writing to memory");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).map_err(csv_error(path))?;
        for r in rows {
            w.write_record(r).map_err(csv_error(path))?;
        }
        w.flush().map_err(io_err(path))?;
    }
    fs::write(path, buf).map_err(io_err(path))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn coord_columns(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn trajectory_rows(traj: &Trajectory, ocp: &OcpDefinition) -> (Vec<String>, Vec<Vec<String>>) {
    let (nq, nu) = (traj.n_q(), traj.n_u());
    let mut header = vec!["t".to_string()];
    for p in ["q", "v", "u", "eps1_", "eps2_"] {
        header.extend(coord_columns(p, if p == "u" { nu } else { nq }));
    }
    let t_f = traj.final_time();
    let rows = (0..SAMPLES)
        .map(|k| {
            let t = t_f * k as f64 / (SAMPLES - 1) as f64;
            let mut r = vec![t];
            r.extend(traj.config(t));
            r.extend(traj.velocity(t));
            r.extend(traj.control(t).values);
            r.extend(eps1(traj, t));
            r.extend(eps2(traj, ocp.model.as_ref(), t));
            r.iter().map(|x| x.to_string()).collect()
        })
        .collect();
    (header, rows)
}

fn summary_columns(nq: usize) -> Vec<String> {
    let mut h: Vec<String> = ["problem", "scheme", "N", "status", "objective", "final_time"]
        .map(String::from)
        .to_vec();
    h.extend(coord_columns("E1_q", nq));
    h.extend(coord_columns("E2_q", nq));
    h.extend(
        ["joint_E1", "joint_E2", "iterations", "eq_violation", "stationarity", "wall_seconds"].map(String::from),
    );
    h
}

fn summary_row(r: &ErrorReport, nq: usize) -> Vec<String> {
    let mut row = vec![
        r.problem.clone(),
        r.scheme.to_string(),
        r.n.to_string(),
        r.status.clone(),
        opt(r.objective),
        opt(r.final_time),
    ];
    for e in [&r.e1, &r.e2] {
        row.extend((0..nq).map(|i| opt(e.get(i).copied())));
    }
    row.extend([
        opt(r.joint_e1),
        opt(r.joint_e2),
        r.iterations.to_string(),
        opt(r.eq_violation),
        opt(r.stationarity),
        r.wall_time.to_string(),
    ]);
    row
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: &'static str,
    config: &'a RunConfig,
    runs: &'a [ErrorReport],
}

fn error_row(ocp: &OcpDefinition, scheme: Scheme, n: usize, message: String) -> ErrorReport {
    ErrorReport {
        problem: ocp.name.clone(),
        scheme,
        n,
        status: "error".into(),
        message: Some(message),
        objective: None,
        final_time: None,
        e1: Vec::new(),
        e2: Vec::new(),
        joint_e1: None,
        joint_e2: None,
        iterations: 0,
        eq_violation: None,
        stationarity: None,
        wall_time: 0.0,
    }
}

/// Solves every `(scheme, N)` of `config`, writing one trajectory file per
/// solve plus `summary.json` or `summary.csv` and the normalized
/// `config.toml`. Returns 0 iff every solve converged.
pub fn cmd_solve(config: &RunConfig) -> Result<u8, CliError> {
    let ocp = config.problem.ocp()?;
    let opts = config.solve_options();
    ensure_dir(&config.out)?;
    write_file(&config.out.join("config.toml"), &config.to_toml())?;
    let nq = ocp.n_q();
    let mut reports = Vec::new();
    for scheme in config.scheme.schemes() {
        for &n in &config.n {
            let report = match solve_ocp(&ocp, scheme, n, &opts).and_then(|s| {
                let r = error_report(&ocp, &s)?;
                Ok((s, r))
            }) {
                Ok((solved, report)) => {
                    let (header, rows) = trajectory_rows(&solved.trajectory, &ocp);
                    let path = config.out.join(format!("trajectory_{}_{}_N{}.csv", ocp.name, scheme, n));
                    let comment = format!(
                        "schema: {TRAJECTORY_SCHEMA}; problem: {}; scheme: {scheme}; N: {n}; columns: {}",
                        ocp.name,
                        header.join(" ")
                    );
                    write_csv(&path, &comment, &header, &rows)?;
                    report
                }
                Err(e) => error_row(&ocp, scheme, n, e.to_string()),
            };
            println!(
                "{} {} N={}: {} objective={} t_f={}",
                ocp.name,
                scheme,
                n,
                report.status,
                opt(report.objective),
                opt(report.final_time)
            );
            reports.push(report);
        }
    }
    match config.format {
        Format::Json => {
            let text = serde_json::to_string_pretty(&Summary {
                schema: SUMMARY_SCHEMA,
                config,
                runs: &reports,
            })
            .map_err(|e| CliError::Io(e.to_string()))?;
            write_file(&config.out.join("summary.json"), &(text + "\n"))?;
        }
        Format::Csv => {
            let rows: Vec<_> = reports.iter().map(|r| summary_row(r, nq)).collect();
            let comment = format!("schema: {SUMMARY_SCHEMA}; config: config.toml");
            write_csv(&config.out.join("summary.csv"), &comment, &summary_columns(nq), &rows)?;
        }
    }
    Ok(if reports.iter().all(ErrorReport::converged) { 0 } else { 1 })
}

fn sweep_columns(nq: usize) -> Vec<String> {
    let mut h = vec!["scheme".to_string(), "N".to_string()];
    h.extend(coord_columns("E2_q", nq));
    h.extend(["joint_E2", "iterations", "wall_seconds", "status"].map(String::from));
    h
}

fn sweep_row(r: &ErrorReport, nq: usize) -> Vec<String> {
    let mut row = vec![r.scheme.to_string(), r.n.to_string()];
    row.extend((0..nq).map(|i| opt(r.e2.get(i).copied())));
    row.extend([
        opt(r.joint_e2),
        r.iterations.to_string(),
        r.wall_time.to_string(),
        r.status.clone(),
    ]);
    row
}

/// Solves all `(scheme, N)` pairs on a worker pool and writes the rows in
/// `(scheme, N)` order. Returns 0 iff at least one row converged.
pub fn cmd_sweep(config: &RunConfig) -> Result<u8, CliError> {
    let ocp = config.problem.ocp()?;
    let opts = config.solve_options();
    let jobs: Vec<(Scheme, usize)> = config
        .scheme
        .schemes()
        .into_iter()
        .flat_map(|s| config.n.iter().map(move |&n| (s, n)))
        .collect();
    let results: Vec<Mutex<Option<ErrorReport>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(scheme, n)) = jobs.get(i) else { break };
                let report = sweep(&ocp, scheme, &[n], &opts)
                    .map(|mut v| v.remove(0))
                    .unwrap_or_else(|e| error_row(&ocp, scheme, n, e.to_string()));
                *results[i].lock().expect("no worker panics while holding the lock") = Some(report);
            });
        }
    });
    let reports: Vec<ErrorReport> = results
        .into_iter()
        .map(|m| m.into_inner().expect("workers finished").expect("every job ran"))
        .collect();
    for r in &reports {
        println!("{} N={}: {} E2={:?}", r.scheme, r.n, r.status, r.e2);
    }

    ensure_dir(&config.out)?;
    write_file(&config.out.join("config.toml"), &config.to_toml())?;
    let nq = ocp.n_q();
    match config.format {
        Format::Csv => {
            let header = sweep_columns(nq);
            let comment = format!(
                "schema: {SWEEP_SCHEMA}; problem: {}; columns: {}; E2 is the integrated absolute second-order error per coordinate; joint_E2 sums them when units agree",
                ocp.name,
                header.join(" ")
            );
            let rows: Vec<_> = reports.iter().map(|r| sweep_row(r, nq)).collect();
            write_csv(&config.out.join("sweep.csv"), &comment, &header, &rows)?;
        }
        Format::Json => {
            let text = serde_json::to_string_pretty(&serde_json::json!({
                "schema": SWEEP_SCHEMA,
                "config": config,
                "rows": reports,
            }))
            .map_err(|e| CliError::Io(e.to_string()))?;
            write_file(&config.out.join("sweep.json"), &(text + "\n"))?;
        }
    }
    Ok(if reports.iter().any(ErrorReport::converged) { 0 } else { 1 })
}

/// Discrepancies between one collocated IVP solution and the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvpReport {
    pub scheme: Scheme,
    pub n: usize,
    /// Max-norm over `(q, v)` at `t_f`.
    pub endpoint_discrepancy: f64,
    /// Max-norm over `(q, v)` and the uniform sample grid.
    pub max_grid_discrepancy: f64,
    pub final_state: Vec<f64>,
}

#[derive(Serialize)]
struct IvpOutput<'a> {
    schema: &'static str,
    problem: &'a str,
    config: &'a IvpConfig,
    reference_steps: usize,
    reference_final_state: &'a [f64],
    grid_points: usize,
    runs: &'a [IvpReport],
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Collocates the IVP with each requested scheme and compares against the
/// adaptive reference integrator. Returns 0 when every collocation solve
/// succeeded.
pub fn cmd_ivp(config: &IvpConfig) -> Result<u8, CliError> {
    let problem: ProblemSpec = field("problem", &config.problem)?;
    let model = problem.model()?;
    let (nq, nu) = (model.n_q(), model.n_u());
    if config.q0.len() != nq {
        return Err(CliError::Config(format!("q0: {} needs {nq} entries", model.name())));
    }
    let v0 = config.v0.clone().unwrap_or_else(|| vec![0.0; nq]);
    if v0.len() != nq {
        return Err(CliError::Config(format!("v0: {} needs {nq} entries", model.name())));
    }
    if config.u.len() != nu {
        return Err(CliError::Config(format!(
            "u: {} needs {nu} control expression(s), got {}",
            model.name(),
            config.u.len()
        )));
    }
    let exprs = config.u.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>, _>>()?;
    let exprs = Arc::new(exprs);
    let control: ControlFn = Arc::new(move |t| exprs.iter().map(|e| e.eval(t)).collect());

    let reference = reference_integrate(
        Arc::clone(&model),
        &config.q0,
        &v0,
        Arc::clone(&control),
        config.tf,
        config.tol,
    )?;
    let spec = IvpSpec {
        model: Arc::clone(&model),
        q0: config.q0.clone(),
        v0,
        control,
        t_f: config.tf,
        n: config.n,
    };
    let mut runs = Vec::new();
    let mut failed = false;
    for scheme in config.scheme.schemes() {
        let solved = match scheme {
            Scheme::Lg => solve_ivp_lg(&spec),
            Scheme::Lg2 => solve_ivp_lg2(&spec),
        };
        let traj = match solved {
            Ok(t) => t,
            Err(e) => {
                eprintln!("{scheme} N={}: {e}", config.n);
                failed = true;
                continue;
            }
        };
        let final_state = traj.state(config.tf);
        let grid = (0..SAMPLES).map(|k| config.tf * k as f64 / (SAMPLES - 1) as f64);
        let max_grid = grid
            .map(|t| max_diff(&traj.state(t), &reference.state(t)))
            .fold(0.0, f64::max);
        let report = IvpReport {
            scheme,
            n: config.n,
            endpoint_discrepancy: max_diff(&final_state, reference.final_state()),
            max_grid_discrepancy: max_grid,
            final_state,
        };
        println!(
            "{scheme} N={}: endpoint {:e}, max over grid {:e}",
            config.n, report.endpoint_discrepancy, report.max_grid_discrepancy
        );
        runs.push(report);
    }

    ensure_dir(&config.out)?;
    match config.format {
        Format::Json => {
            let text = serde_json::to_string_pretty(&IvpOutput {
                schema: IVP_SCHEMA,
                problem: model.name(),
                config,
                reference_steps: reference.step_count(),
                reference_final_state: reference.final_state(),
                grid_points: SAMPLES,
                runs: &runs,
            })
            .map_err(|e| CliError::Io(e.to_string()))?;
            write_file(&config.out.join("ivp.json"), &(text + "\n"))?;
        }
        Format::Csv => {
            let header: Vec<String> = ["scheme", "N", "endpoint_discrepancy", "max_grid_discrepancy"]
                .map(String::from)
                .to_vec();
            let rows: Vec<_> = runs
                .iter()
                .map(|r| {
                    vec![
                        r.scheme.to_string(),
                        r.n.to_string(),
                        r.endpoint_discrepancy.to_string(),
                        r.max_grid_discrepancy.to_string(),
                    ]
                })
                .collect();
            let comment = format!(
                "schema: {IVP_SCHEMA}; problem: {}; t_f: {}; grid_points: {SAMPLES}; discrepancies are max-norms over (q, v)",
                model.name(),
                config.tf
            );
            write_csv(&config.out.join("ivp.csv"), &comment, &header, &rows)?;
        }
    }
    Ok(if failed { 1 } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("lgcol").chain(args.iter().copied()))
            .unwrap()
            .command
    }

    #[test]
    fn flags_override_defaults() {
        let Command::Solve(a) = parse(&["solve", "--problem", "cartpole", "--scheme", "lg", "--N", "8,10"]) else {
            panic!()
        };
        let c = a.resolve().unwrap();
        assert_eq!(c.problem, ProblemSpec::CartPole);
        assert_eq!(c.scheme, SchemeChoice::Lg);
        assert_eq!(c.n, vec![8, 10]);
    }

    #[test]
    fn zero_points_is_a_config_error() {
        let Command::Solve(a) = parse(&["solve", "--N", "0"]) else { panic!() };
        let e = a.resolve().unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("N"));
    }

    #[test]
    fn bad_expression_exits_two_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let Command::Ivp(a) = parse(&["ivp", "--q0", "0.1", "--u", "cosh(t)", "--tf", "1", "--N", "8", "--out", out])
        else {
            panic!()
        };
        let e = cmd_ivp(&a.resolve().unwrap()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("position 0"), "{e}");
    }

    #[test]
    fn negative_initial_angle_parses() {
        let Command::Ivp(a) = parse(&["ivp", "--q0", "-0.2", "--u", "-1", "--tf", "1", "--N", "4"]) else {
            panic!()
        };
        let c = a.resolve().unwrap();
        assert_eq!(c.q0, vec![-0.2]);
        assert_eq!(c.u, vec!["-1".to_string()]);
    }
}
