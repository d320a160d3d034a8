//! Initial value problems: collocation solves by damped Newton, and an
//! adaptive Dormand-Prince reference integrator.
//!
//! With the control given as a function of time, LG2 has `(N + 2) n_q`
//! unknowns in `Q` and as many equations: `N n_q` collocation residuals plus
//! the initial configuration and velocity. LG has `(N + 1) 2 n_q` unknowns in
//! `X`, `N 2 n_q` collocation residuals and the initial state.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::basis::{build_basis, BasisError, CollocationBasis, Scheme};
use crate::models::{first_order_wrap, SecondOrderModel};
use crate::nlp::{differentiate, NlpError};
use crate::transcription::{time_unmap, Trajectory, TranscriptionError};

pub type ControlFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

pub const NEWTON_TOL: f64 = 1e-10;
pub const MAX_NEWTON_ITER: usize = 50;
pub const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IvpError {
    #[error("invalid IVP: {0}")]
    Invalid(String),
    #[error("Newton did not converge; residual history {history:?}")]
    NewtonFailed { history: Vec<f64> },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("tolerance {0} outside [1e-13, 1e-6]")]
    InvalidTolerance(f64),
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Transcription(#[from] TranscriptionError),
    #[error(transparent)]
    Nlp(#[from] NlpError),
}

#[derive(Clone)]
pub struct IvpSpec {
    pub model: Arc<dyn SecondOrderModel>,
    pub q0: Vec<f64>,
    pub v0: Vec<f64>,
    pub control: ControlFn,
    pub t_f: f64,
    pub n: usize,
}

impl fmt::Debug for IvpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IvpSpec")
            .field("model", &self.model.name())
            .field("q0", &self.q0)
            .field("v0", &self.v0)
            .field("t_f", &self.t_f)
            .field("n", &self.n)
            .finish_non_exhaustive()
    }
}

impl IvpSpec {
    pub fn validate(&self) -> Result<(), IvpError> {
        let nq = self.model.n_q();
        if self.q0.len() != nq || self.v0.len() != nq {
            return Err(IvpError::Invalid(format!(
                "initial state needs {nq} configuration and {nq} velocity entries"
            )));
        }
        if !(self.t_f > 0.0 && self.t_f.is_finite()) {
            return Err(IvpError::Invalid(format!("t_f must be positive, got {}", self.t_f)));
        }
        if self.n == 0 {
            return Err(IvpError::Invalid("N must be at least 1".into()));
        }
        let u = (self.control)(0.0);
        if u.len() != self.model.n_u() {
            return Err(IvpError::Invalid(format!(
                "control returns {} entries, model expects {}",
                u.len(),
                self.model.n_u()
            )));
        }
        Ok(())
    }

    fn controls(&self, basis: &CollocationBasis) -> (Vec<f64>, DMatrix<f64>) {
        let times: Vec<f64> = basis
            .collocation_points()
            .iter()
            .map(|&tau| time_unmap(tau, self.t_f))
            .collect();
        let nu = self.model.n_u();
        let mut u = DMatrix::zeros(times.len(), nu);
        for (k, &t) in times.iter().enumerate() {
            let uk = (self.control)(t);
            for j in 0..nu {
                u[(k, j)] = uk[j];
            }
        }
        (times, u)
    }
}

/// Damped Newton on the square system `r(z) = 0`. Each step is halved until
/// the residual max-norm decreases.
fn newton<R>(residual: R, mut z: Vec<f64>) -> Result<Vec<f64>, IvpError>
where
    R: Fn(&[f64], &mut [f64]),
{
    let m = z.len();
    let mut r = vec![0.0; m];
    residual(&z, &mut r);
    let norm = |r: &[f64]| r.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let mut history = vec![norm(&r)];
    for _ in 0..MAX_NEWTON_ITER {
        let current = *history.last().unwrap();
        // Below tolerance, keep polishing while steps still halve the residual.
        let stagnant = history.len() > 1 && current > 0.5 * history[history.len() - 2];
        if current == 0.0 || (current <= NEWTON_TOL && stagnant) {
            return Ok(z);
        }
        if !current.is_finite() {
            break;
        }
        let jac = differentiate(&residual, m, &z)?;
        let Some(step) = jac.lu().solve(&DVector::from_iterator(m, r.iter().map(|x| -x))) else {
            break;
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut trial = vec![0.0; m];
        let mut rt = vec![0.0; m];
        for _ in 0..=MAX_HALVINGS {
            for i in 0..m {
                trial[i] = z[i] + alpha * step[i];
            }
            residual(&trial, &mut rt);
            let n = norm(&rt);
            if n < current {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        std::mem::swap(&mut z, &mut trial);
        std::mem::swap(&mut r, &mut rt);
        history.push(norm(&r));
    }
    if *history.last().unwrap() <= NEWTON_TOL {
        return Ok(z);
    }
    Err(IvpError::NewtonFailed { history })
}

/// Second-order Legendre-Gauss IVP solve.
pub fn solve_ivp_lg2(spec: &IvpSpec) -> Result<Trajectory, IvpError> {
    spec.validate()?;
    let nq = spec.model.n_q();
    let n = spec.n;
    let basis = Arc::new(build_basis(Scheme::Lg2, n)?);
    let rows = n + 2;
    let (times, u) = spec.controls(&basis);
    let d = basis.diff_matrix().clone();
    let d2 = &d * &d;
    let s = 2.0 / spec.t_f;
    let model = Arc::clone(&spec.model);
    let residual = |z: &[f64], out: &mut [f64]| {
        let q = DMatrix::from_row_slice(rows, nq, z);
        let qd = &d * &q * s;
        let qdd = &d2 * &q * (s * s);
        let mut g = vec![0.0; nq];
        let mut qr = vec![0.0; nq];
        let mut vr = vec![0.0; nq];
        let mut ur = vec![0.0; u.ncols()];
        for k in 0..n {
            for j in 0..nq {
                qr[j] = q[(k + 1, j)];
                vr[j] = qd[(k + 1, j)];
            }
            for j in 0..u.ncols() {
                ur[j] = u[(k, j)];
            }
            model.accel(&qr, &vr, &ur, times[k], &mut g);
            for j in 0..nq {
                out[k * nq + j] = qdd[(k + 1, j)] - g[j];
            }
        }
        for j in 0..nq {
            out[n * nq + j] = q[(0, j)] - spec.q0[j];
            out[(n + 1) * nq + j] = qd[(0, j)] - spec.v0[j];
        }
    };
    let guess: Vec<f64> = (0..rows).flat_map(|_| spec.q0.iter().copied()).collect();
    let z = newton(residual, guess)?;
    Ok(Trajectory::from_nodes(
        basis,
        spec.t_f,
        DMatrix::from_row_slice(rows, nq, &z),
        u,
    )?)
}

/// First-order Legendre-Gauss IVP solve.
pub fn solve_ivp_lg(spec: &IvpSpec) -> Result<Trajectory, IvpError> {
    spec.validate()?;
    let nq = spec.model.n_q();
    let nx = 2 * nq;
    let n = spec.n;
    let basis = Arc::new(build_basis(Scheme::Lg, n)?);
    let rows = n + 1;
    let (times, u) = spec.controls(&basis);
    let d = basis.diff_matrix().clone();
    let s = 2.0 / spec.t_f;
    let field = first_order_wrap(Arc::clone(&spec.model));
    let x0: Vec<f64> = spec.q0.iter().chain(&spec.v0).copied().collect();
    let residual = |z: &[f64], out: &mut [f64]| {
        let x = DMatrix::from_row_slice(rows, nx, z);
        let dx = &d * &x * s;
        let mut f = vec![0.0; nx];
        let mut ur = vec![0.0; u.ncols()];
        for k in 0..n {
            let xr: Vec<f64> = x.row(k + 1).iter().copied().collect();
            for j in 0..u.ncols() {
                ur[j] = u[(k, j)];
            }
            field.eval(&xr, &ur, times[k], &mut f);
            for j in 0..nx {
                out[k * nx + j] = dx[(k, j)] - f[j];
            }
        }
        for j in 0..nx {
            out[n * nx + j] = x[(0, j)] - x0[j];
        }
    };
    let guess: Vec<f64> = (0..rows).flat_map(|_| x0.iter().copied()).collect();
    let z = newton(residual, guess)?;
    Ok(Trajectory::from_nodes(
        basis,
        spec.t_f,
        DMatrix::from_row_slice(rows, nx, &z),
        u,
    )?)
}

/// Local error target per step as a fraction of the requested tolerance,
/// leaving room for accumulation over the interval.
const LOCAL_TOLERANCE_FRACTION: f64 = 0.1;

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
/// Dense-output weights of the continuous extension.
const DENSE: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// One accepted step with its interpolation coefficients.
#[derive(Debug, Clone)]
struct DenseStep {
    t0: f64,
    h: f64,
    coeffs: [Vec<f64>; 5],
}

impl DenseStep {
    fn eval(&self, t: f64) -> Vec<f64> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.coeffs;
        (0..r1.len())
            .map(|i| r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i]))))
            .collect()
    }
}

/// Dense solution on `[0, t_f]` of the first-order form, state `(q, v)`.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    t_f: f64,
    n_q: usize,
    steps: Vec<DenseStep>,
    final_state: Vec<f64>,
}

impl ReferenceSolution {
    pub fn final_time(&self) -> f64 {
        self.t_f
    }

    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn final_state(&self) -> &[f64] {
        &self.final_state
    }

    /// State at `t`, clamped to `[0, t_f]`.
    pub fn state(&self, t: f64) -> Vec<f64> {
        let t = t.clamp(0.0, self.t_f);
        if t == self.t_f {
            return self.final_state.clone();
        }
        let idx = self
            .steps
            .partition_point(|s| s.t0 + s.h <= t)
            .min(self.steps.len() - 1);
        self.steps[idx].eval(t)
    }

    pub fn config(&self, t: f64) -> Vec<f64> {
        let mut x = self.state(t);
        x.truncate(self.n_q);
        x
    }

    pub fn velocity(&self, t: f64) -> Vec<f64> {
        self.state(t).split_off(self.n_q)
    }
}

/// Adaptive Dormand-Prince 5(4) integration of `q'' = g(q, q', u(t), t)`.
/// Each step's error estimate is held below `0.1 tol (1 + |y|)` in max-norm.
pub fn reference_integrate(
    model: Arc<dyn SecondOrderModel>,
    q0: &[f64],
    v0: &[f64],
    control: ControlFn,
    t_f: f64,
    tol: f64,
) -> Result<ReferenceSolution, IvpError> {
    if !(1e-13..=1e-6).contains(&tol) {
        return Err(IvpError::InvalidTolerance(tol));
    }
    let nq = model.n_q();
    if q0.len() != nq || v0.len() != nq {
        return Err(IvpError::Invalid(format!(
            "initial state needs {nq} configuration and {nq} velocity entries"
        )));
    }
    if !(t_f > 0.0 && t_f.is_finite()) {
        return Err(IvpError::Invalid(format!("t_f must be positive, got {t_f}")));
    }
    let field = first_order_wrap(model);
    let dim = 2 * nq;
    let rhs = |t: f64, y: &[f64]| field.eval_vec(y, &control(t), t);
    let local = LOCAL_TOLERANCE_FRACTION * tol;

    let mut t = 0.0;
    let mut y: Vec<f64> = q0.iter().chain(v0).copied().collect();
    let mut k1 = rhs(t, &y);
    let mut h = initial_step(&rhs, &y, &k1, t_f, local);
    let mut steps = Vec::new();
    let mut ytmp = vec![0.0; dim];
    while t < t_f {
        let last = t + h >= t_f;
        if last {
            h = t_f - t;
        }
        if h <= 1e-14 * t_f.max(1.0) && !last {
            return Err(IvpError::StepUnderflow { t });
        }
        let mut k: Vec<Vec<f64>> = vec![k1.clone()];
        for s in 1..7 {
            for i in 0..dim {
                ytmp[i] = y[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
            }
            let ts = if s == 6 { t + h } else { t + C[s] * h };
            k.push(rhs(ts, &ytmp));
        }
        // Stage 7 is evaluated at the fifth-order solution (FSAL).
        let y1 = ytmp.clone();
        let mut err = 0.0_f64;
        for i in 0..dim {
            let e = h * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
            let sc = local * (1.0 + y[i].abs().max(y1[i].abs()));
            err = f64::max(err, (e / sc).abs());
        }
        if !err.is_finite() {
            if last || h < 1e-14 * t_f.max(1.0) {
                return Err(IvpError::NonFinite { t });
            }
            h *= 0.2;
            continue;
        }
        if err <= 1.0 {
            let diff: Vec<f64> = (0..dim).map(|i| y1[i] - y[i]).collect();
            let bspl: Vec<f64> = (0..dim).map(|i| h * k[0][i] - diff[i]).collect();
            let c4: Vec<f64> = (0..dim).map(|i| diff[i] - h * k[6][i] - bspl[i]).collect();
            let c5: Vec<f64> = (0..dim)
                .map(|i| h * (0..7).map(|s| DENSE[s] * k[s][i]).sum::<f64>())
                .collect();
            steps.push(DenseStep {
                t0: t,
                h,
                coeffs: [y.clone(), diff, bspl, c4, c5],
            });
            t = if last { t_f } else { t + h };
            y = y1;
            k1 = k[6].clone();
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    Ok(ReferenceSolution {
        t_f,
        n_q: nq,
        steps,
        final_state: y,
    })
}

/// Starting step from the Hairer-Wanner heuristic.
fn initial_step<F>(rhs: &F, y: &[f64], f0: &[f64], t_f: f64, tol: f64) -> f64
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let sc: Vec<f64> = y.iter().map(|v| tol + tol * v.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    let d0 = rms(y);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let f1 = rhs(h0, &y1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| (a - b) / h0).collect();
    let d2 = rms(&diff);
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(t_f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::eps1;
    use crate::models::{DoubleIntegrator, Oscillator, Pendulum, PendulumParams};

    fn zero_control() -> ControlFn {
        Arc::new(|_| vec![0.0])
    }

    fn pendulum() -> Arc<dyn SecondOrderModel> {
        Arc::new(Pendulum::new(PendulumParams::default()))
    }

    fn spec(model: Arc<dyn SecondOrderModel>, q0: f64, control: ControlFn, t_f: f64, n: usize) -> IvpSpec {
        IvpSpec {
            model,
            q0: vec![q0],
            v0: vec![0.0],
            control,
            t_f,
            n,
        }
    }

    #[test]
    fn equilibrium_stays_at_rest() {
        let s = spec(pendulum(), 0.0, zero_control(), 2.0, 8);
        let lg2 = solve_ivp_lg2(&s).unwrap();
        assert!(lg2.node_values().iter().all(|&x| x == 0.0));
        let lg = solve_ivp_lg(&s).unwrap();
        assert!(lg.node_values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pendulum_lg2_matches_reference() {
        let s = spec(pendulum(), 0.1, zero_control(), 1.0, 16);
        let traj = solve_ivp_lg2(&s).unwrap();
        let r = reference_integrate(pendulum(), &[0.1], &[0.0], zero_control(), 1.0, 1e-12).unwrap();
        assert!((traj.config(1.0)[0] - r.final_state()[0]).abs() < 1e-8);
        assert!((traj.config(0.0)[0] - 0.1).abs() < 1e-12);
        assert!(traj.config_rate(0.0)[0].abs() < 1e-12);
    }

    #[test]
    fn double_integrator_parabola_is_exact() {
        let s = IvpSpec {
            model: Arc::new(DoubleIntegrator),
            q0: vec![0.0],
            v0: vec![0.0],
            control: Arc::new(|_| vec![1.0]),
            t_f: 1.5,
            n: 4,
        };
        let traj = solve_ivp_lg2(&s).unwrap();
        for i in 0..=15 {
            let t = 0.1 * i as f64;
            assert!((traj.config(t)[0] - 0.5 * t * t).abs() < 1e-11);
        }
    }

    #[test]
    fn lg_oscillator_hits_cosine() {
        let s = IvpSpec {
            model: Arc::new(Oscillator { omega: 1.0 }),
            q0: vec![1.0],
            v0: vec![0.0],
            control: zero_control(),
            t_f: 1.0,
            n: 16,
        };
        let lg = solve_ivp_lg(&s).unwrap();
        assert!((lg.config(1.0)[0] - 1f64.cos()).abs() < 1e-8);
        let lg2 = solve_ivp_lg2(&s).unwrap();
        let mid = 0.5 * (lg.collocation_times()[7] + lg.collocation_times()[8]);
        assert!(eps1(&lg, mid)[0] != 0.0);
        assert_eq!(eps1(&lg2, mid)[0], 0.0);
    }

    #[test]
    fn newton_failure_keeps_history() {
        let err = newton(|z, out| out[0] = z[0] * z[0] + 1.0, vec![0.5]).unwrap_err();
        match err {
            IvpError::NewtonFailed { history } => assert!(!history.is_empty() && history[0] > 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reference_small_angle_is_harmonic() {
        let q0 = 1e-3;
        let r = reference_integrate(pendulum(), &[q0], &[0.0], zero_control(), 2.0, 1e-12).unwrap();
        let w = (9.81_f64 / 1.0).sqrt();
        for i in 0..=40 {
            let t = 0.05 * i as f64;
            assert!((r.config(t)[0] - q0 * (w * t).cos()).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn reference_conserves_energy() {
        let r = reference_integrate(pendulum(), &[1.0], &[0.0], zero_control(), 5.0, 1e-10).unwrap();
        let energy = |x: &[f64]| 0.5 * x[1] * x[1] - 9.81 * x[0].cos();
        let e0 = energy(&[1.0, 0.0]);
        for i in 0..=100 {
            let x = r.state(0.05 * i as f64);
            assert!((energy(&x) - e0).abs() < 1e-9, "{}", energy(&x) - e0);
        }
    }

    #[test]
    fn reference_rest_is_zero() {
        let r = reference_integrate(pendulum(), &[0.0], &[0.0], zero_control(), 3.0, 1e-10).unwrap();
        assert!(r.state(1.7).iter().all(|&x| x == 0.0));
        assert!(r.final_state().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn reference_rejects_tolerance_out_of_range() {
        for tol in [1e-14, 1e-5] {
            assert_eq!(
                reference_integrate(pendulum(), &[0.0], &[0.0], zero_control(), 1.0, tol).unwrap_err(),
                IvpError::InvalidTolerance(tol)
            );
        }
    }
}
