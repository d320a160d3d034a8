//! Reference solver: augmented Lagrangian outer loop on the constraints,
//! primal-dual barrier Newton inner loop on the variable bounds.
//!
//! For multipliers `lambda`, penalty `rho` and barrier weight `mu` the inner
//! loop minimizes
//!
//! ```text
//! f + lambda . c + rho/2 |c|^2 + PHR(h) - mu * sum(log(z - lower) + log(upper - z))
//! ```
//!
//! from a strictly interior point. The Newton model Hessian is
//! `H + Sigma + rho J^T J`, where `H` models the Lagrangian Hessian (second
//! differences by default, damped BFGS on request), `Sigma` is the
//! primal-dual barrier term and `J` stacks the equality Jacobian with the
//! active inequality rows. The step solves the augmented system
//!
//! ```text
//! [ H + Sigma   J^T      ] [d]   [-g]
//! [ J          -I / rho  ] [w] = [ 0]
//! ```
//!
//! which stays well conditioned as the penalty grows. An indefinite model is
//! shifted by a multiple of the identity until it factors.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{differentiate, max_abs, NlpError, NlpProblem};

const INITIAL_PENALTY: f64 = 100.0;
const MAX_PENALTY: f64 = 1e12;
const PENALTY_GROWTH: f64 = 10.0;
/// Violation must shrink by at least this factor per outer iteration.
const REQUIRED_DECREASE: f64 = 0.25;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
/// Outer iterations in a row without an inner step before giving up.
const MAX_IDLE: usize = 20;
const DUAL_SCALE_THRESHOLD: f64 = 100.0;
const MAX_STALLS: usize = 3;
/// Multiple of the most negative Hessian eigenvalue used as diagonal shift.
const MAX_SCALED_GRADIENT: f64 = 100.0;
const ACCEPTABLE_FACTOR: f64 = 100.0;
const SHIFT_FACTOR: f64 = 5.0;
const INITIAL_BARRIER: f64 = 0.1;
/// Relative distance by which the starting point is moved off its bounds.
const BOUND_PUSH: f64 = 1e-2;
const FRACTION_TO_BOUNDARY: f64 = 0.99;
/// Bound multipliers are kept within this factor of `mu / slack`.
const DUAL_SAFEGUARD: f64 = 1e10;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    /// Budget of inner (Newton) iterations across all outer loops.
    pub max_iter: usize,
    pub initial_guess: Option<Vec<f64>>,
    pub hessian: HessianMode,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            opt_tol: 1e-6,
            max_iter: 5000,
            initial_guess: None,
            hessian: HessianMode::default(),
        }
    }
}

/// How the inner loop models the Lagrangian Hessian.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Damped BFGS updates.
    Bfgs,
    /// Second differences of the Lagrangian.
    #[default]
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// Feasible, with stationarity within `ACCEPTABLE_FACTOR * opt_tol`, but
    /// no further progress was possible at finite-difference resolution.
    Acceptable,
    MaxIter,
    LineSearchFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::Acceptable => "acceptable",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::LineSearchFailure => "line_search_failure",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub z_star: Vec<f64>,
    pub objective_value: f64,
    pub eq_violation: f64,
    pub ineq_violation: f64,
    /// Max-norm of the Lagrangian gradient at `z_star`, including the
    /// barrier's bound multipliers.
    pub stationarity: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub penalty: f64,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
    pub status: SolveStatus,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// Converged, or stopped at an acceptable point.
    pub fn usable(&self) -> bool {
        matches!(self.status, SolveStatus::Converged | SolveStatus::Acceptable)
    }
}

/// Anything that can solve an [`NlpProblem`] under the [`solve`] contract.
pub trait NlpBackend {
    fn name(&self) -> &str;
    fn solve(&self, problem: &NlpProblem, opts: &SolveOptions) -> Result<SolveResult, NlpError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceSolver;

impl NlpBackend for ReferenceSolver {
    fn name(&self) -> &str {
        "reference-augmented-lagrangian"
    }

    fn solve(&self, problem: &NlpProblem, opts: &SolveOptions) -> Result<SolveResult, NlpError> {
        solve(problem, opts)
    }
}

/// Function values and derivatives at one point.
struct Point {
    z: Vec<f64>,
    f: f64,
    c: Vec<f64>,
    h: Vec<f64>,
    grad_f: Vec<f64>,
    jac_c: DMatrix<f64>,
    jac_h: DMatrix<f64>,
}

struct Multipliers {
    eq: Vec<f64>,
    ineq: Vec<f64>,
    rho: f64,
}

impl Multipliers {
    fn merit(&self, f: f64, c: &[f64], h: &[f64]) -> f64 {
        let mut phi = f;
        for (l, ci) in self.eq.iter().zip(c) {
            phi += l * ci + 0.5 * self.rho * ci * ci;
        }
        for (m, hi) in self.ineq.iter().zip(h) {
            let s = (m + self.rho * hi).max(0.0);
            phi += (s * s - m * m) / (2.0 * self.rho);
        }
        phi
    }

    /// First-order multiplier estimates `lambda + rho c`, `max(0, mu + rho h)`.
    fn estimates(&self, c: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let eq = self
            .eq
            .iter()
            .zip(c)
            .map(|(l, ci)| l + self.rho * ci)
            .collect();
        let ineq = self
            .ineq
            .iter()
            .zip(h)
            .map(|(m, hi)| (m + self.rho * hi).max(0.0))
            .collect();
        (eq, ineq)
    }
}

fn lagrangian_grad(p: &Point, eq: &[f64], ineq: &[f64]) -> Vec<f64> {
    let mut g = p.grad_f.clone();
    for (j, gj) in g.iter_mut().enumerate() {
        for (i, l) in eq.iter().enumerate() {
            *gj += p.jac_c[(i, j)] * l;
        }
        for (i, m) in ineq.iter().enumerate() {
            if *m != 0.0 {
                *gj += p.jac_h[(i, j)] * m;
            }
        }
    }
    g
}

struct Evaluator<'a> {
    problem: &'a NlpProblem,
}

impl Evaluator<'_> {
    fn values(&self, z: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), NlpError> {
        let f = self.problem.eval_objective(z);
        if !f.is_finite() {
            return Err(NlpError::NonFinite {
                what: "objective",
                index: 0,
            });
        }
        let c = self.problem.eval_eq(z);
        if let Some(i) = c.iter().position(|x| !x.is_finite()) {
            return Err(NlpError::NonFinite {
                what: "equality constraint",
                index: i,
            });
        }
        let h = self.problem.eval_ineq(z);
        if let Some(i) = h.iter().position(|x| !x.is_finite()) {
            return Err(NlpError::NonFinite {
                what: "inequality constraint",
                index: i,
            });
        }
        Ok((f, c, h))
    }

    fn point(&self, z: Vec<f64>) -> Result<Point, NlpError> {
        let (f, c, h) = self.values(&z)?;
        self.linearize(z, f, c, h)
    }

    fn linearize(&self, z: Vec<f64>, f: f64, c: Vec<f64>, h: Vec<f64>) -> Result<Point, NlpError> {
        let p = self.problem;
        let obj = &p.objective;
        let gf = differentiate(|x: &[f64], out: &mut [f64]| out[0] = obj(x), 1, &z)?;
        let jac_c = differentiate(|x: &[f64], out: &mut [f64]| (p.eq.eval)(x, out), c.len(), &z)?;
        let jac_h = differentiate(|x: &[f64], out: &mut [f64]| (p.ineq.eval)(x, out), h.len(), &z)?;
        Ok(Point {
            z,
            f,
            c,
            h,
            grad_f: gf.row(0).iter().copied().collect(),
            jac_c,
            jac_h,
        })
    }
}

/// Damped (Powell) BFGS update keeping `b` positive definite.
fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>, first: bool) {
    let sy = s.dot(y);
    let ss = s.dot(s);
    if ss == 0.0 {
        return;
    }
    if first && sy > 0.0 {
        let scale = y.dot(y) / sy;
        if scale.is_finite() && scale > 0.0 {
            b.fill_with_identity();
            *b *= scale;
        }
    }
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if sbs <= 0.0 {
        return;
    }
    let y = if sy < 0.2 * sbs {
        let theta = 0.8 * sbs / (sbs - sy);
        y * theta + &bs * (1.0 - theta)
    } else {
        y.clone()
    };
    let sy = s.dot(&y);
    if sy <= f64::EPSILON * sbs {
        return;
    }
    *b += &y * y.transpose() / sy - &bs * bs.transpose() / sbs;
}

/// Log-barrier state for the variable bounds.
struct Barrier {
    mu: f64,
    /// Multipliers of the finite lower bounds (zero elsewhere).
    zl: Vec<f64>,
    /// Multipliers of the finite upper bounds (zero elsewhere).
    zu: Vec<f64>,
}

/// Variables the barrier acts on. Variables with `lower == upper` never move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Fixed,
    Bounded { lo: bool, hi: bool },
}

fn kinds(problem: &NlpProblem) -> Vec<Kind> {
    problem
        .lower
        .iter()
        .zip(&problem.upper)
        .map(|(&lo, &hi)| {
            if lo == hi {
                Kind::Fixed
            } else {
                Kind::Bounded {
                    lo: lo.is_finite(),
                    hi: hi.is_finite(),
                }
            }
        })
        .collect()
}

/// Moves `z` strictly inside its bounds.
fn push_inside(problem: &NlpProblem, z: &mut [f64]) {
    for i in 0..z.len() {
        let (lo, hi) = (problem.lower[i], problem.upper[i]);
        if lo == hi {
            z[i] = lo;
            continue;
        }
        let width = hi - lo;
        if lo.is_finite() {
            let push = (BOUND_PUSH * lo.abs().max(1.0)).min(0.5 * BOUND_PUSH * width);
            z[i] = z[i].max(lo + push);
        }
        if hi.is_finite() {
            let push = (BOUND_PUSH * hi.abs().max(1.0)).min(0.5 * BOUND_PUSH * width);
            z[i] = z[i].min(hi - push);
        }
    }
}

/// Trial point with its objective and constraint values.
type Step = (Vec<f64>, f64, Vec<f64>, Vec<f64>);

#[derive(Debug)]
enum InnerExit {
    Tolerance,
    Stalled,
    Budget,
}

struct Solver<'a> {
    eval: Evaluator<'a>,
    problem: &'a NlpProblem,
    kinds: Vec<Kind>,
    hess: DMatrix<f64>,
    hess_fresh: bool,
    mode: HessianMode,
    barrier: Barrier,
    iterations: usize,
    max_iter: usize,
}

impl Solver<'_> {
    fn al_gradient(&self, p: &Point, mult: &Multipliers) -> Vec<f64> {
        let (eq, ineq) = mult.estimates(&p.c, &p.h);
        lagrangian_grad(p, &eq, &ineq)
    }

    fn barrier_value(&self, z: &[f64]) -> f64 {
        let mut v = 0.0;
        for (i, k) in self.kinds.iter().enumerate() {
            if let Kind::Bounded { lo, hi } = *k {
                if lo {
                    v -= (z[i] - self.problem.lower[i]).ln();
                }
                if hi {
                    v -= (self.problem.upper[i] - z[i]).ln();
                }
            }
        }
        self.barrier.mu * v
    }

    /// Scaling of the stationarity test: one unless the average multiplier
    /// magnitude exceeds `DUAL_SCALE_THRESHOLD`.
    fn dual_scale(&self, eq: &[f64], ineq: &[f64]) -> f64 {
        let total: f64 = eq
            .iter()
            .chain(ineq)
            .chain(&self.barrier.zl)
            .chain(&self.barrier.zu)
            .map(|x| x.abs())
            .sum();
        let count = eq.len() + ineq.len() + 2 * self.kinds.len();
        (total / count.max(1) as f64).max(DUAL_SCALE_THRESHOLD) / DUAL_SCALE_THRESHOLD
    }

    /// Gradient of the barrier subproblem; zero on fixed variables.
    fn barrier_gradient(&self, z: &[f64], g: &[f64]) -> Vec<f64> {
        let mu = self.barrier.mu;
        self.kinds
            .iter()
            .enumerate()
            .map(|(i, k)| match *k {
                Kind::Fixed => 0.0,
                Kind::Bounded { lo, hi } => {
                    let mut gi = g[i];
                    if lo {
                        gi -= mu / (z[i] - self.problem.lower[i]);
                    }
                    if hi {
                        gi += mu / (self.problem.upper[i] - z[i]);
                    }
                    gi
                }
            })
            .collect()
    }

    /// Primal-dual barrier curvature `zl / (z - lower) + zu / (upper - z)`.
    fn sigma(&self, z: &[f64]) -> Vec<f64> {
        self.kinds
            .iter()
            .enumerate()
            .map(|(i, k)| match *k {
                Kind::Fixed => 0.0,
                Kind::Bounded { lo, hi } => {
                    let mut s = 0.0;
                    if lo {
                        s += self.barrier.zl[i] / (z[i] - self.problem.lower[i]);
                    }
                    if hi {
                        s += self.barrier.zu[i] / (self.problem.upper[i] - z[i]);
                    }
                    s
                }
            })
            .collect()
    }

    /// Rows of the equality Jacobian followed by the active inequality rows.
    fn active_rows(&self, p: &Point, mult: &Multipliers) -> DMatrix<f64> {
        let active: Vec<usize> = (0..p.h.len())
            .filter(|&i| mult.ineq[i] + mult.rho * p.h[i] > 0.0)
            .collect();
        let n = p.z.len();
        let mut rows = DMatrix::zeros(p.c.len() + active.len(), n);
        rows.rows_mut(0, p.c.len()).copy_from(&p.jac_c);
        for (k, &i) in active.iter().enumerate() {
            rows.row_mut(p.c.len() + k).copy_from(&p.jac_h.row(i));
        }
        for (j, k) in self.kinds.iter().enumerate() {
            if *k == Kind::Fixed {
                rows.column_mut(j).fill(0.0);
            }
        }
        rows
    }

    /// Shift making `m + shift I` positive definite: zero when it already
    /// is, otherwise `SHIFT_FACTOR` times the most negative eigenvalue.
    fn shift_for(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows();
        let scale = (0..n).map(|i| m[(i, i)].abs()).fold(1.0, f64::max);
        if m.clone().cholesky().is_some() {
            return 0.0;
        }
        let lowest = m.clone().symmetric_eigenvalues().min();
        (1e-8 * scale - SHIFT_FACTOR * lowest).max(0.0)
    }

    /// Newton direction for the barrier subproblem with gradient `gb`.
    fn direction(&self, p: &Point, gb: &[f64], mult: &Multipliers) -> Vec<f64> {
        let n = p.z.len();
        let rows = self.active_rows(p, mult);
        let sigma = self.sigma(&p.z);
        let mut w = self.hess.clone();
        for i in 0..n {
            if self.kinds[i] == Kind::Fixed {
                w.row_mut(i).fill(0.0);
                w.column_mut(i).fill(0.0);
                w[(i, i)] = 1.0;
            } else {
                w[(i, i)] += sigma[i];
            }
        }
        if self.mode == HessianMode::FiniteDifference {
            let shift = Self::shift_for(&(&w + rows.transpose() * &rows * mult.rho));
            for i in 0..n {
                w[(i, i)] += shift;
            }
        }
        let nc = rows.nrows();
        let mut kkt = DMatrix::zeros(n + nc, n + nc);
        kkt.view_mut((0, 0), (n, n)).copy_from(&w);
        kkt.view_mut((n, 0), (nc, n)).copy_from(&rows);
        kkt.view_mut((0, n), (n, nc)).copy_from(&rows.transpose());
        for k in 0..nc {
            kkt[(n + k, n + k)] = -1.0 / mult.rho;
        }
        let mut rhs = DVector::zeros(n + nc);
        for i in 0..n {
            rhs[i] = -gb[i];
        }
        match kkt.lu().solve(&rhs) {
            Some(sol) if sol.iter().all(|x| x.is_finite()) => sol.rows(0, n).iter().copied().collect(),
            _ => (0..n).map(|i| -gb[i] / w[(i, i)].abs().max(1.0)).collect(),
        }
    }

    /// Largest step in `(0, 1]` keeping `z + alpha d` a fraction away from
    /// every bound.
    fn max_step(&self, z: &[f64], d: &[f64]) -> f64 {
        let mut alpha: f64 = 1.0;
        for (i, k) in self.kinds.iter().enumerate() {
            if let Kind::Bounded { lo, hi } = *k {
                if lo && d[i] < 0.0 {
                    let slack = z[i] - self.problem.lower[i];
                    alpha = alpha.min(-FRACTION_TO_BOUNDARY * slack / d[i]);
                }
                if hi && d[i] > 0.0 {
                    let slack = self.problem.upper[i] - z[i];
                    alpha = alpha.min(FRACTION_TO_BOUNDARY * slack / d[i]);
                }
            }
        }
        alpha
    }

    /// Backtracking Armijo search on the barrier merit. When the predicted
    /// decrease is below the merit's rounding level the full step is taken
    /// unchecked and flagged, so the caller can judge it by the gradient.
    fn line_search(
        &self,
        p: &Point,
        gb: &[f64],
        d: &[f64],
        mult: &Multipliers,
    ) -> Result<Option<(Step, bool)>, NlpError> {
        let slope: f64 = gb.iter().zip(d).map(|(g, d)| g * d).sum();
        if !(slope < 0.0) {
            return Ok(None);
        }
        let phi0 = mult.merit(p.f, &p.c, &p.h) + self.barrier_value(&p.z);
        let resolution = 100.0 * f64::EPSILON * phi0.abs().max(1.0);
        let mut alpha = self.max_step(&p.z, d);
        if -slope * alpha <= resolution {
            let trial: Vec<f64> = p.z.iter().zip(d).map(|(z, d)| z + alpha * d).collect();
            return match self.eval.values(&trial) {
                Ok((f, c, h)) => Ok(Some(((trial, f, c, h), true))),
                Err(NlpError::NonFinite { .. }) => Ok(None),
                Err(e) => Err(e),
            };
        }
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = p.z.iter().zip(d).map(|(z, d)| z + alpha * d).collect();
            if trial == p.z {
                return Ok(None);
            }
            match self.eval.values(&trial) {
                Ok((f, c, h)) => {
                    let phi = mult.merit(f, &c, &h) + self.barrier_value(&trial);
                    if phi <= phi0 + ARMIJO * alpha * slope {
                        return Ok(Some(((trial, f, c, h), false)));
                    }
                }
                Err(NlpError::NonFinite { .. }) => {}
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
        }
        Ok(None)
    }

    /// Newton step on the bound multipliers for the primal step `z_new - z`,
    /// kept positive and close to `mu / slack`.
    fn update_bound_multipliers(&mut self, z: &[f64], z_new: &[f64]) {
        let mu = self.barrier.mu;
        let n = z.len();
        let lower = &self.problem.lower;
        let upper = &self.problem.upper;
        let mut dzl = vec![0.0; n];
        let mut dzu = vec![0.0; n];
        let mut alpha: f64 = 1.0;
        for (i, k) in self.kinds.iter().enumerate() {
            if let Kind::Bounded { lo, hi } = *k {
                let d = z_new[i] - z[i];
                if lo {
                    let s = z[i] - lower[i];
                    let zl = self.barrier.zl[i];
                    dzl[i] = mu / s - zl - zl / s * d;
                    if dzl[i] < 0.0 {
                        alpha = alpha.min(-FRACTION_TO_BOUNDARY * zl / dzl[i]);
                    }
                }
                if hi {
                    let s = upper[i] - z[i];
                    let zu = self.barrier.zu[i];
                    dzu[i] = mu / s - zu + zu / s * d;
                    if dzu[i] < 0.0 {
                        alpha = alpha.min(-FRACTION_TO_BOUNDARY * zu / dzu[i]);
                    }
                }
            }
        }
        for (i, k) in self.kinds.iter().enumerate() {
            if let Kind::Bounded { lo, hi } = *k {
                if lo {
                    let s = z_new[i] - lower[i];
                    let v = self.barrier.zl[i] + alpha * dzl[i];
                    self.barrier.zl[i] = v.clamp(mu / (DUAL_SAFEGUARD * s), DUAL_SAFEGUARD * mu / s);
                }
                if hi {
                    let s = upper[i] - z_new[i];
                    let v = self.barrier.zu[i] + alpha * dzu[i];
                    self.barrier.zu[i] = v.clamp(mu / (DUAL_SAFEGUARD * s), DUAL_SAFEGUARD * mu / s);
                }
            }
        }
    }

    /// Second-difference Hessian of `f + eq . c + ineq . h`.
    fn lagrangian_hessian(&self, z: &[f64], eq: &[f64], ineq: &[f64]) -> Result<DMatrix<f64>, NlpError> {
        let n = z.len();
        let problem = self.problem;
        let mut cbuf = vec![0.0; eq.len()];
        let mut hbuf = vec![0.0; ineq.len()];
        let has_ineq = ineq.iter().any(|&m| m != 0.0);
        let mut ell = |x: &[f64]| {
            let mut v = problem.eval_objective(x);
            (problem.eq.eval)(x, &mut cbuf);
            v += eq.iter().zip(&cbuf).map(|(l, c)| l * c).sum::<f64>();
            if has_ineq {
                (problem.ineq.eval)(x, &mut hbuf);
                v += ineq.iter().zip(&hbuf).map(|(m, h)| m * h).sum::<f64>();
            }
            v
        };
        let base = f64::EPSILON.powf(0.25);
        let mut x = z.to_vec();
        let steps: Vec<f64> = z
            .iter()
            .map(|&zj| {
                let h = base * zj.abs().max(1.0);
                (zj + h) - zj
            })
            .collect();
        let l0 = ell(&x);
        let mut hess = DMatrix::zeros(n, n);
        for j in 0..n {
            let hj = steps[j];
            x[j] = z[j] + hj;
            let lp = ell(&x);
            x[j] = z[j] - hj;
            let lm = ell(&x);
            let d = (lp - 2.0 * l0 + lm) / (hj * hj);
            if !d.is_finite() {
                return Err(NlpError::NonFiniteDerivative { row: j, col: j });
            }
            hess[(j, j)] = d;
            for k in 0..j {
                let hk = steps[k];
                let mut quad = [0.0; 4];
                for (q, (sj, sk)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
                    .into_iter()
                    .enumerate()
                {
                    x[j] = z[j] + sj * hj;
                    x[k] = z[k] + sk * hk;
                    quad[q] = ell(&x);
                }
                x[k] = z[k];
                let d = (quad[0] - quad[1] - quad[2] + quad[3]) / (4.0 * hj * hk);
                if !d.is_finite() {
                    return Err(NlpError::NonFiniteDerivative { row: j, col: k });
                }
                hess[(j, k)] = d;
                hess[(k, j)] = d;
            }
            x[j] = z[j];
        }
        Ok(hess)
    }

    fn inner(
        &mut self,
        mut p: Point,
        mult: &Multipliers,
        tol: f64,
    ) -> Result<(Point, InnerExit), NlpError> {
        loop {
            let g = self.al_gradient(&p, mult);
            let gb = self.barrier_gradient(&p.z, &g);
            if max_abs(&gb) <= tol {
                return Ok((p, InnerExit::Tolerance));
            }
            if self.iterations >= self.max_iter {
                return Ok((p, InnerExit::Budget));
            }
            self.iterations += 1;
            if self.mode == HessianMode::FiniteDifference {
                let (eq, ineq) = mult.estimates(&p.c, &p.h);
                self.hess = self.lagrangian_hessian(&p.z, &eq, &ineq)?;
            }
            let d = self.direction(&p, &gb, mult);
            let Some(((z, f, c, h), unchecked)) = self.line_search(&p, &gb, &d, mult)? else {
                return Ok((p, InnerExit::Stalled));
            };
            let barrier = (self.barrier.zl.clone(), self.barrier.zu.clone());
            self.update_bound_multipliers(&p.z, &z);
            let next = self.eval.linearize(z, f, c, h)?;
            if unchecked {
                let g_next = self.al_gradient(&next, mult);
                if max_abs(&self.barrier_gradient(&next.z, &g_next)) >= 0.9 * max_abs(&gb) {
                    (self.barrier.zl, self.barrier.zu) = barrier;
                    return Ok((p, InnerExit::Stalled));
                }
            }
            if self.mode == HessianMode::Bfgs {
                let (eq, ineq) = mult.estimates(&next.c, &next.h);
                let g_old = lagrangian_grad(&p, &eq, &ineq);
                let g_new = lagrangian_grad(&next, &eq, &ineq);
                let s = DVector::from_iterator(next.z.len(), next.z.iter().zip(&p.z).map(|(a, b)| a - b));
                let y = DVector::from_iterator(g_new.len(), g_new.iter().zip(&g_old).map(|(a, b)| a - b));
                bfgs_update(&mut self.hess, &s, &y, self.hess_fresh);
                self.hess_fresh = false;
            }
            p = next;
        }
    }
}

/// Row factors capping every gradient at `MAX_SCALED_GRADIENT` at the
/// starting point. Factors never exceed one.
struct Scaling {
    objective: f64,
    eq: Vec<f64>,
    ineq: Vec<f64>,
}

impl Scaling {
    fn at(problem: &NlpProblem, z: &[f64]) -> Result<Self, NlpError> {
        let factor = |g: f64| (MAX_SCALED_GRADIENT / g).min(1.0);
        let grad = differentiate(|x, out| out[0] = problem.eval_objective(x), 1, z)?;
        let rows = |set: &super::ConstraintSet| -> Result<Vec<f64>, NlpError> {
            let jac = differentiate(|x, out| (set.eval)(x, out), set.len(), z)?;
            Ok((0..set.len()).map(|i| factor(jac.row(i).amax())).collect())
        };
        Ok(Self {
            objective: factor(grad.amax()),
            eq: rows(&problem.eq)?,
            ineq: rows(&problem.ineq)?,
        })
    }

    fn apply(&self, problem: &NlpProblem) -> NlpProblem {
        let objective = Arc::clone(&problem.objective);
        let sf = self.objective;
        let scale_set = |set: &super::ConstraintSet, factors: &[f64]| {
            let eval = Arc::clone(&set.eval);
            let factors = factors.to_vec();
            super::ConstraintSet {
                blocks: set.blocks.clone(),
                eval: Arc::new(move |z: &[f64], out: &mut [f64]| {
                    eval(z, out);
                    for (o, s) in out.iter_mut().zip(&factors) {
                        *o *= s;
                    }
                }),
            }
        };
        NlpProblem {
            dim: problem.dim,
            objective: Arc::new(move |z: &[f64]| sf * objective(z)),
            eq: scale_set(&problem.eq, &self.eq),
            ineq: scale_set(&problem.ineq, &self.ineq),
            lower: problem.lower.clone(),
            upper: problem.upper.clone(),
        }
    }

    /// Violation of the unscaled constraints from scaled values.
    fn violation(&self, c: &[f64], h: &[f64]) -> f64 {
        let eq = c.iter().zip(&self.eq).fold(0.0_f64, |m, (c, s)| m.max((c / s).abs()));
        h.iter().zip(&self.ineq).fold(eq, |m, (h, s)| m.max(h / s))
    }

    fn unscale(&self, mult: &[f64], factors: &[f64]) -> Vec<f64> {
        mult.iter().zip(factors).map(|(m, s)| m * s / self.objective).collect()
    }
}

/// Minimizes `problem` from `opts.initial_guess` (or the projected origin).
pub fn solve(problem: &NlpProblem, opts: &SolveOptions) -> Result<SolveResult, NlpError> {
    problem.check()?;
    let n = problem.dim;
    let mut z0 = match &opts.initial_guess {
        Some(g) if g.len() != n => {
            return Err(NlpError::DimensionMismatch {
                what: "initial_guess",
                expected: n,
                got: g.len(),
            })
        }
        Some(g) => g.clone(),
        None => vec![0.0; n],
    };
    problem.project(&mut z0);
    push_inside(problem, &mut z0);
    let original = problem;
    let scaling = Scaling::at(problem, &z0)?;
    let scaled = scaling.apply(problem);
    let problem = &scaled;

    let kinds = kinds(problem);
    let has_bounds = kinds
        .iter()
        .any(|k| matches!(k, Kind::Bounded { lo, hi } if *lo || *hi));
    let mu_min = 0.1 * opts.feas_tol.min(opts.opt_tol);
    let mu = if has_bounds { INITIAL_BARRIER } else { 0.0 };
    let mut zl = vec![0.0; n];
    let mut zu = vec![0.0; n];
    for (i, k) in kinds.iter().enumerate() {
        if let Kind::Bounded { lo, hi } = *k {
            if lo {
                zl[i] = mu / (z0[i] - problem.lower[i]);
            }
            if hi {
                zu[i] = mu / (problem.upper[i] - z0[i]);
            }
        }
    }
    let mut solver = Solver {
        eval: Evaluator { problem },
        problem,
        kinds,
        hess: DMatrix::identity(n, n),
        hess_fresh: true,
        mode: opts.hessian,
        barrier: Barrier { mu, zl, zu },
        iterations: 0,
        max_iter: opts.max_iter,
    };
    let mut point = solver.eval.point(z0)?;
    let mut mult = Multipliers {
        eq: vec![0.0; problem.n_eq()],
        ineq: vec![0.0; problem.n_ineq()],
        rho: INITIAL_PENALTY,
    };
    let violation = |p: &Point| scaling.violation(&p.c, &p.h);
    let mut prev_violation = violation(&point);
    let mut omega = 1e-2_f64.max(opts.opt_tol);
    let mut dual_scale = 1.0;
    // Multipliers are only refreshed once the violation is below `eta`.
    let mut eta = 1.0_f64;
    let mut outer = 0;
    let mut stalls = 0;
    let mut idle = 0;

    let status = loop {
        outer += 1;
        let tol = omega.max(10.0 * solver.barrier.mu) * dual_scale;
        let before = solver.iterations;
        let (p, exit) = solver.inner(point, &mult, tol)?;
        idle = if solver.iterations == before { idle + 1 } else { 0 };
        point = p;
        let viol = violation(&point);
        let (eq, ineq) = mult.estimates(&point.c, &point.h);
        let stationarity = max_abs(&solver.barrier_gradient(&point.z, &lagrangian_grad(&point, &eq, &ineq)));
        let barrier_done = solver.barrier.mu <= mu_min;
        dual_scale = solver.dual_scale(&eq, &ineq);
        if viol <= opts.feas_tol && stationarity <= opts.opt_tol * dual_scale && barrier_done {
            mult.eq = eq;
            mult.ineq = ineq;
            break SolveStatus::Converged;
        }
        let acceptable = viol <= opts.feas_tol
            && stationarity <= ACCEPTABLE_FACTOR * opts.opt_tol * dual_scale
            && barrier_done;
        let stuck = match exit {
            InnerExit::Budget => break SolveStatus::MaxIter,
            InnerExit::Stalled => {
                stalls += 1;
                stalls >= MAX_STALLS
            }
            InnerExit::Tolerance => {
                stalls = 0;
                idle >= MAX_IDLE
            }
        };
        if stuck {
            break if acceptable {
                SolveStatus::Acceptable
            } else {
                SolveStatus::LineSearchFailure
            };
        }
        let progress = viol <= eta;
        if progress {
            mult.eq = eq;
            mult.ineq = ineq;
            eta = (0.25 * eta).max(0.1 * opts.feas_tol);
        }
        if viol > opts.feas_tol && viol > REQUIRED_DECREASE * prev_violation {
            mult.rho = (mult.rho * PENALTY_GROWTH).min(MAX_PENALTY);
        }
        prev_violation = viol;
        omega = (omega * 0.1).max(0.5 * opts.opt_tol);
        if progress {
            let mu = solver.barrier.mu;
            solver.barrier.mu = (0.2 * mu).min(mu.powf(1.5)).max(mu_min).min(mu);
        }
    };

    let z_star = point.z.clone();
    let stationarity = max_abs(&solver.barrier_gradient(
        &point.z,
        &lagrangian_grad(&point, &mult.eq, &mult.ineq),
    )) / scaling.objective;
    Ok(SolveResult {
        objective_value: original.eval_objective(&z_star),
        eq_violation: original.eq_violation(&z_star),
        ineq_violation: original.ineq_violation(&z_star),
        z_star,
        stationarity,
        iterations: solver.iterations,
        outer_iterations: outer,
        penalty: mult.rho,
        eq_multipliers: scaling.unscale(&mult.eq, &scaling.eq),
        ineq_multipliers: scaling.unscale(&mult.ineq, &scaling.ineq),
        status,
    })
}
