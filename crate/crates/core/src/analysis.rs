//! Dynamic-error functionals of a collocated trajectory and LG vs LG2 sweeps.
//!
//! For coordinate `i` the first- and second-order errors are
//!
//! ```text
//! eps1_i(t) = q_i'(t) - v_i(t)
//! eps2_i(t) = q_i''(t) - g_i(q, q', u, t)
//! ```
//!
//! and `E_i = integral over [0, t_f] of |eps_i(t)|`.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{gauss_legendre, Scheme};
use crate::models::{OcpDefinition, SecondOrderModel};
use crate::nlp::{solve, NlpError, SolveOptions, SolveResult};
use crate::transcription::{extract_trajectory, transcribe, Trajectory, TranscriptionError, Transcription};

pub const PANELS: usize = 20;
pub const POINTS_PER_PANEL: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("error integrand is not finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("final time must be positive, got {0}")]
    InvalidFinalTime(f64),
    #[error("joint error needs coordinates with equal units, got {0:?}")]
    MixedUnits(Vec<String>),
    #[error("collocation counts must be a nonempty list of positive integers")]
    InvalidCounts,
    #[error(transparent)]
    Transcription(#[from] TranscriptionError),
    #[error(transparent)]
    Nlp(#[from] NlpError),
}

/// `q'(t) - v(t)`; identically zero for LG2, whose velocity is `q'`.
pub fn eps1(traj: &Trajectory, t: f64) -> Vec<f64> {
    match traj.scheme() {
        Scheme::Lg2 => vec![0.0; traj.n_q()],
        Scheme::Lg => {
            let v = traj.velocity(t);
            traj.config_rate(t).iter().zip(&v).map(|(a, b)| a - b).collect()
        }
    }
}

/// `q''(t) - g(q(t), q'(t), u(t), t)` from the configuration polynomial and
/// the control interpolant.
pub fn eps2(traj: &Trajectory, model: &dyn SecondOrderModel, t: f64) -> Vec<f64> {
    let q = traj.config(t);
    let qd = traj.config_rate(t);
    let u = traj.control(t).values;
    let g = model.accel_vec(&q, &qd, &u, t);
    traj.config_accel(t).iter().zip(&g).map(|(a, b)| a - b).collect()
}

/// Fails unless every coordinate of `model` has the same unit.
pub fn check_same_units(model: &dyn SecondOrderModel) -> Result<(), AnalysisError> {
    let units = model.coordinate_units();
    if units.windows(2).all(|w| w[0] == w[1]) {
        Ok(())
    } else {
        Err(AnalysisError::MixedUnits(units.iter().map(|s| s.to_string()).collect()))
    }
}

/// `sum_i |eps2_i(t)|`, defined only when all coordinates share units.
pub fn joint_eps2(traj: &Trajectory, model: &dyn SecondOrderModel, t: f64) -> Result<f64, AnalysisError> {
    check_same_units(model)?;
    Ok(eps2(traj, model, t).iter().map(|e| e.abs()).sum())
}

/// `integral over [0, t_f] of |err(t)|` by composite Gauss-Legendre
/// quadrature on [`PANELS`] equal panels of [`POINTS_PER_PANEL`] points.
pub fn integrate_error(mut err: impl FnMut(f64) -> f64, t_f: f64) -> Result<f64, AnalysisError> {
    if !(t_f > 0.0 && t_f.is_finite()) {
        return Err(AnalysisError::InvalidFinalTime(t_f));
    }
    let (x, w) = gauss_legendre(POINTS_PER_PANEL).expect("fixed quadrature order is valid");
    let h = t_f / PANELS as f64;
    let mut total = 0.0;
    for p in 0..PANELS {
        let mid = (p as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(&w) {
            let t = mid + 0.5 * h * xi;
            let e = err(t);
            if !e.is_finite() {
                return Err(AnalysisError::NonFinite { t });
            }
            total += 0.5 * h * wi * e.abs();
        }
    }
    Ok(total)
}

/// Integrates every coordinate of a vector-valued error in one pass.
fn integrate_components(
    n: usize,
    mut err: impl FnMut(f64) -> Vec<f64>,
    t_f: f64,
) -> Result<Vec<f64>, AnalysisError> {
    let mut cache: Option<(f64, Vec<f64>)> = None;
    (0..n)
        .map(|i| {
            integrate_error(
                |t| {
                    if cache.as_ref().is_none_or(|(tc, _)| *tc != t) {
                        cache = Some((t, err(t)));
                    }
                    cache.as_ref().unwrap().1[i]
                },
                t_f,
            )
        })
        .collect()
}

/// Per-coordinate `E1` and `E2`.
pub fn error_integrals(traj: &Trajectory, model: &dyn SecondOrderModel) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
    let n = traj.n_q();
    let tf = traj.final_time();
    let e1 = integrate_components(n, |t| eps1(traj, t), tf)?;
    let e2 = integrate_components(n, |t| eps2(traj, model, t), tf)?;
    Ok((e1, e2))
}

/// Transcription, solver output and extracted trajectory of one solve.
#[derive(Debug, Clone)]
pub struct SolvedOcp {
    pub transcription: Transcription,
    pub result: SolveResult,
    pub trajectory: Trajectory,
    pub wall_time: f64,
}

/// Transcribes `ocp`, solves from the transcription's initial guess unless
/// `opts` carries one, and extracts the trajectory.
pub fn solve_ocp(
    ocp: &OcpDefinition,
    scheme: Scheme,
    n: usize,
    opts: &SolveOptions,
) -> Result<SolvedOcp, AnalysisError> {
    let transcription = transcribe(ocp, scheme, n)?;
    let mut opts = opts.clone();
    if opts.initial_guess.is_none() {
        opts.initial_guess = Some(transcription.initial_guess.clone());
    }
    let start = Instant::now();
    let result = solve(&transcription.problem, &opts)?;
    let wall_time = start.elapsed().as_secs_f64();
    let trajectory = extract_trajectory(
        &transcription.layout,
        &result.z_star,
        Arc::clone(&transcription.basis),
    )?;
    Ok(SolvedOcp {
        transcription,
        result,
        trajectory,
        wall_time,
    })
}

/// Error integrals and solve metadata for one `(scheme, N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub problem: String,
    pub scheme: Scheme,
    pub n: usize,
    /// Solver status, or `"error"` when no trajectory was produced.
    pub status: String,
    pub message: Option<String>,
    pub objective: Option<f64>,
    pub final_time: Option<f64>,
    /// Per coordinate; empty when `status` is `"error"`.
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    /// Present only when all coordinates share units.
    pub joint_e1: Option<f64>,
    pub joint_e2: Option<f64>,
    pub iterations: usize,
    pub eq_violation: Option<f64>,
    pub stationarity: Option<f64>,
    pub wall_time: f64,
}

impl ErrorReport {
    pub fn converged(&self) -> bool {
        self.status == "converged" || self.status == "acceptable"
    }

    /// Equal apart from wall time.
    pub fn same_numbers(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_time = other.wall_time;
        a == *other
    }
}

pub fn error_report(ocp: &OcpDefinition, solved: &SolvedOcp) -> Result<ErrorReport, AnalysisError> {
    let model = ocp.model.as_ref();
    let traj = &solved.trajectory;
    let (e1, e2) = error_integrals(traj, model)?;
    let same_units = check_same_units(model).is_ok();
    let r = &solved.result;
    Ok(ErrorReport {
        problem: ocp.name.clone(),
        scheme: traj.scheme(),
        n: traj.basis().n(),
        status: r.status.to_string(),
        message: None,
        objective: Some(r.objective_value),
        final_time: Some(traj.final_time()),
        joint_e1: same_units.then(|| e1.iter().sum()),
        joint_e2: same_units.then(|| e2.iter().sum()),
        e1,
        e2,
        iterations: r.iterations,
        eq_violation: Some(r.eq_violation.max(r.ineq_violation)),
        stationarity: Some(r.stationarity),
        wall_time: solved.wall_time,
    })
}

/// One report per entry of `ns`, in order. Failures are recorded in the
/// report's status rather than aborting the sweep.
pub fn sweep(
    ocp: &OcpDefinition,
    scheme: Scheme,
    ns: &[usize],
    opts: &SolveOptions,
) -> Result<Vec<ErrorReport>, AnalysisError> {
    if ns.is_empty() || ns.contains(&0) {
        return Err(AnalysisError::InvalidCounts);
    }
    Ok(ns
        .iter()
        .map(|&n| {
            solve_ocp(ocp, scheme, n, opts)
                .and_then(|s| error_report(ocp, &s))
                .unwrap_or_else(|e| ErrorReport {
                    problem: ocp.name.clone(),
                    scheme,
                    n,
                    status: "error".into(),
                    message: Some(e.to_string()),
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
                })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{cartpole_ocp, pendulum_ocp, CartPoleParams, Pendulum, PendulumParams};
    use nalgebra::DMatrix;

    #[test]
    fn integrate_zero_and_constant() {
        assert_eq!(integrate_error(|_| 0.0, 2.0).unwrap(), 0.0);
        assert!((integrate_error(|_| 1.0, 3.0).unwrap() - 3.0).abs() < 1e-12);
        assert!((integrate_error(|_| -1.0, 3.0).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn integrate_rectified_sine() {
        let e = integrate_error(|t| (2.0 * std::f64::consts::PI * t).sin(), 1.0).unwrap();
        assert!((e - 2.0 / std::f64::consts::PI).abs() < 1e-6);
    }

    #[test]
    fn integrate_reports_bad_time() {
        let err = integrate_error(|t| if t > 0.5 { f64::NAN } else { 0.0 }, 1.0).unwrap_err();
        match err {
            AnalysisError::NonFinite { t } => assert!(t > 0.5 && t < 0.55),
            other => panic!("unexpected {other:?}"),
        }
        assert!(integrate_error(|_| 1.0, 0.0).is_err());
    }

    fn lg2_sample() -> Trajectory {
        let basis = Arc::new(crate::basis::build_basis(Scheme::Lg2, 5).unwrap());
        let nodes = DMatrix::from_fn(7, 1, |r, _| (r as f64 * 0.7).sin());
        let controls = DMatrix::from_fn(5, 1, |k, _| k as f64 - 2.0);
        Trajectory::from_nodes(basis, 1.5, nodes, controls).unwrap()
    }

    #[test]
    fn lg2_first_order_error_is_exactly_zero() {
        let traj = lg2_sample();
        for i in 0..=10 {
            assert_eq!(eps1(&traj, 0.15 * i as f64), vec![0.0]);
        }
    }

    #[test]
    fn joint_error_of_single_coordinate_is_absolute_value() {
        let traj = lg2_sample();
        let model = Pendulum::new(PendulumParams::default());
        let e = eps2(&traj, &model, 0.4)[0];
        assert_eq!(joint_eps2(&traj, &model, 0.4).unwrap(), e.abs());
    }

    #[test]
    fn joint_error_rejects_mixed_units() {
        let ocp = cartpole_ocp(CartPoleParams::default());
        assert!(matches!(
            check_same_units(ocp.model.as_ref()),
            Err(AnalysisError::MixedUnits(_))
        ));
    }

    #[test]
    fn sweep_rejects_empty_and_zero() {
        let ocp = pendulum_ocp(PendulumParams::default());
        let opts = SolveOptions::default();
        assert_eq!(sweep(&ocp, Scheme::Lg2, &[], &opts), Err(AnalysisError::InvalidCounts));
        assert_eq!(sweep(&ocp, Scheme::Lg2, &[4, 0], &opts), Err(AnalysisError::InvalidCounts));
    }
}
