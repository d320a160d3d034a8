//! Transcription of an [`OcpDefinition`] into an [`NlpProblem`].
//!
//! * [`Scheme::Lg`] decides the full state `X = (q, v)` at the `N + 1` nodes
//!   and enforces `(2/t_f) D X = F(X, U)` at the Gauss points.
//! * [`Scheme::Lg2`] decides only the configuration `Q` at the `N + 2` nodes.
//!   Velocities and accelerations are `(2/t_f) D* Q` and `(2/t_f)^2 D*^2 Q`,
//!   and `Q'' = G(Q, Q', U)` is enforced on the interior (Gauss) rows.
//!
//! Decision vector layout: node values row by row, then controls at the
//! Gauss points row by row, then `t_f` when it is free.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::basis::{build_basis, BasisError, CollocationBasis, LagrangeBasis, Scheme};
use crate::models::{first_order_wrap, Cost, FinalTime, ModelError, OcpDefinition};
use crate::nlp::{ConstraintBlock, ConstraintSet, NlpProblem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TranscriptionError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("decision vector has length {got}, layout expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("time {t} outside [0, {t_f}]")]
    TimeOutOfRange { t: f64, t_f: f64 },
    #[error("final time must be positive, got {0}")]
    InvalidFinalTime(f64),
    #[error("basis scheme {basis} does not match layout scheme {layout}")]
    SchemeMismatch { basis: Scheme, layout: Scheme },
}

/// Maps `t` in `[0, t_f]` to `tau = -1 + 2 t / t_f`.
pub fn time_map(t: f64, t_f: f64) -> Result<f64, TranscriptionError> {
    if !(t_f > 0.0) {
        return Err(TranscriptionError::InvalidFinalTime(t_f));
    }
    if !(0.0..=t_f).contains(&t) {
        return Err(TranscriptionError::TimeOutOfRange { t, t_f });
    }
    Ok(-1.0 + 2.0 * t / t_f)
}

/// Inverse of [`time_map`].
pub fn time_unmap(tau: f64, t_f: f64) -> f64 {
    t_f * (tau + 1.0) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeVar {
    Fixed(f64),
    Decision(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionLayout {
    pub scheme: Scheme,
    pub n: usize,
    pub n_q: usize,
    pub n_u: usize,
    /// `N + 1` for LG, `N + 2` for LG2.
    pub node_rows: usize,
    /// `2 n_q` for LG (state), `n_q` for LG2 (configuration).
    pub node_cols: usize,
    pub controls_offset: usize,
    pub final_time: TimeVar,
    pub total_len: usize,
}

impl DecisionLayout {
    pub fn new(scheme: Scheme, n: usize, n_q: usize, n_u: usize, final_time: FinalTime) -> Self {
        let node_rows = scheme.basis_len(n);
        let node_cols = match scheme {
            Scheme::Lg => 2 * n_q,
            Scheme::Lg2 => n_q,
        };
        let controls_offset = node_rows * node_cols;
        let mut total_len = controls_offset + n * n_u;
        let final_time = match final_time {
            FinalTime::Fixed(tf) => TimeVar::Fixed(tf),
            FinalTime::Free { .. } => {
                total_len += 1;
                TimeVar::Decision(total_len - 1)
            }
        };
        Self {
            scheme,
            n,
            n_q,
            n_u,
            node_rows,
            node_cols,
            controls_offset,
            final_time,
            total_len,
        }
    }

    pub fn node_index(&self, row: usize, col: usize) -> usize {
        row * self.node_cols + col
    }

    /// Index of control component `j` at collocation point `k` (0-based).
    pub fn control_index(&self, k: usize, j: usize) -> usize {
        self.controls_offset + k * self.n_u + j
    }

    pub fn node_row<'a>(&self, z: &'a [f64], row: usize) -> &'a [f64] {
        let start = self.node_index(row, 0);
        &z[start..start + self.node_cols]
    }

    pub fn control_row<'a>(&self, z: &'a [f64], k: usize) -> &'a [f64] {
        let start = self.control_index(k, 0);
        &z[start..start + self.n_u]
    }

    pub fn final_time(&self, z: &[f64]) -> f64 {
        match self.final_time {
            TimeVar::Fixed(tf) => tf,
            TimeVar::Decision(i) => z[i],
        }
    }

    /// Named, disjoint ranges covering `0..total_len`.
    pub fn slices(&self) -> Vec<(&'static str, Range<usize>)> {
        let nodes = match self.scheme {
            Scheme::Lg => "state_nodes",
            Scheme::Lg2 => "config_nodes",
        };
        let mut out = vec![
            (nodes, 0..self.controls_offset),
            ("controls", self.controls_offset..self.controls_offset + self.n * self.n_u),
        ];
        if let TimeVar::Decision(i) = self.final_time {
            out.push(("final_time", i..i + 1));
        }
        out
    }
}

/// A transcribed problem together with what is needed to interpret its
/// decision vector.
#[derive(Debug, Clone)]
pub struct Transcription {
    pub problem: NlpProblem,
    pub layout: DecisionLayout,
    pub basis: Arc<CollocationBasis>,
    pub initial_guess: Vec<f64>,
}

struct Context {
    ocp: OcpDefinition,
    basis: Arc<CollocationBasis>,
    layout: DecisionLayout,
    /// Lagrange basis values at `tau = +1` (LG terminal-state extrapolation).
    end_weights: Vec<f64>,
}

impl Context {
    fn collocation_times(&self, tf: f64) -> impl Iterator<Item = f64> + '_ {
        self.basis
            .collocation_points()
            .iter()
            .map(move |&tau| time_unmap(tau, tf))
    }

    fn objective(&self, z: &[f64], states: &[Vec<f64>]) -> f64 {
        let tf = self.layout.final_time(z);
        match &self.ocp.cost {
            Cost::FinalTime => tf,
            Cost::Integrand(l) => {
                let sum: f64 = self
                    .basis
                    .quad_weights()
                    .iter()
                    .zip(states)
                    .enumerate()
                    .map(|(k, (w, x))| w * l(x, self.layout.control_row(z, k)))
                    .sum();
                0.5 * tf * sum
            }
        }
    }

    /// LG: state rows at the collocation points are decision rows `1..=N`.
    fn lg_collocation_states(&self, z: &[f64]) -> Vec<Vec<f64>> {
        (1..=self.layout.n)
            .map(|r| self.layout.node_row(z, r).to_vec())
            .collect()
    }

    /// LG2: `(Q, Q', Q'')` at every node, time derivatives in seconds.
    fn lg2_node_derivatives(&self, z: &[f64]) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let l = &self.layout;
        let q = DMatrix::from_row_slice(l.node_rows, l.node_cols, &z[..l.controls_offset]);
        let s = 2.0 / l.final_time(z);
        let d = self.basis.diff_matrix();
        let qd = (d * &q) * s;
        let qdd = (d * &qd) * s;
        (q, qd, qdd)
    }

    fn lg2_state(q: &DMatrix<f64>, qd: &DMatrix<f64>, row: usize) -> Vec<f64> {
        q.row(row).iter().chain(qd.row(row).iter()).copied().collect()
    }
}

fn bounds_for(ocp: &OcpDefinition, layout: &DecisionLayout) -> (Vec<f64>, Vec<f64>) {
    let mut lower = vec![f64::NEG_INFINITY; layout.total_len];
    let mut upper = vec![f64::INFINITY; layout.total_len];
    for r in 0..layout.node_rows {
        for c in 0..layout.node_cols {
            let i = layout.node_index(r, c);
            lower[i] = ocp.state_bounds[c].lo;
            upper[i] = ocp.state_bounds[c].hi;
        }
    }
    for k in 0..layout.n {
        for j in 0..layout.n_u {
            let i = layout.control_index(k, j);
            lower[i] = ocp.control_bounds[j].lo;
            upper[i] = ocp.control_bounds[j].hi;
        }
    }
    if let (TimeVar::Decision(i), FinalTime::Free { lo, hi }) = (layout.final_time, ocp.final_time) {
        lower[i] = lo;
        upper[i] = hi;
    }
    (lower, upper)
}

/// Linear configuration between the guess poses, zero velocity and
/// control, mid-range `t_f` when free.
fn initial_guess(ocp: &OcpDefinition, layout: &DecisionLayout, basis: &CollocationBasis) -> Vec<f64> {
    let mut z = vec![0.0; layout.total_len];
    for (r, &tau) in basis.nodes().points().iter().enumerate() {
        let s = 0.5 * (tau + 1.0);
        for j in 0..layout.n_q {
            z[layout.node_index(r, j)] = ocp.guess_start[j] + s * (ocp.guess_end[j] - ocp.guess_start[j]);
        }
    }
    if let (TimeVar::Decision(i), FinalTime::Free { lo, hi }) = (layout.final_time, ocp.final_time) {
        z[i] = 0.5 * (lo + hi);
    }
    let (lower, upper) = bounds_for(ocp, layout);
    for ((x, lo), hi) in z.iter_mut().zip(lower).zip(upper) {
        *x = x.clamp(lo, hi);
    }
    z
}

fn context(ocp: &OcpDefinition, scheme: Scheme, n: usize) -> Result<Context, TranscriptionError> {
    ocp.validate()?;
    let basis = Arc::new(build_basis(scheme, n)?);
    let layout = DecisionLayout::new(scheme, n, ocp.n_q(), ocp.n_u(), ocp.final_time);
    let end_weights = basis.interpolant().basis_values(1.0);
    Ok(Context {
        ocp: ocp.clone(),
        basis,
        layout,
        end_weights,
    })
}

fn objective_fn(ctx: &Arc<Context>) -> crate::nlp::ScalarFn {
    let ctx = Arc::clone(ctx);
    Arc::new(move |z: &[f64]| match ctx.layout.scheme {
        Scheme::Lg => ctx.objective(z, &ctx.lg_collocation_states(z)),
        Scheme::Lg2 => {
            if matches!(ctx.ocp.cost, Cost::FinalTime) {
                return ctx.layout.final_time(z);
            }
            let (q, qd, _) = ctx.lg2_node_derivatives(z);
            let states: Vec<Vec<f64>> = (1..=ctx.layout.n)
                .map(|r| Context::lg2_state(&q, &qd, r))
                .collect();
            ctx.objective(z, &states)
        }
    })
}

fn path_set(ctx: &Arc<Context>) -> Vec<ConstraintBlock> {
    match &ctx.ocp.path {
        Some(p) if p.len > 0 => vec![ConstraintBlock::new("path", ctx.layout.n * p.len)],
        _ => Vec::new(),
    }
}

/// First-order Legendre-Gauss transcription.
pub fn transcribe_lg(ocp: &OcpDefinition, n: usize) -> Result<Transcription, TranscriptionError> {
    let ctx = Arc::new(context(ocp, Scheme::Lg, n)?);
    let layout = ctx.layout.clone();
    let nx = layout.node_cols;
    let nb = ocp.boundary.len;

    let eq_ctx = Arc::clone(&ctx);
    let field = first_order_wrap(Arc::clone(&ocp.model));
    let eq = ConstraintSet {
        blocks: vec![
            ConstraintBlock::new("collocation", n * nx),
            ConstraintBlock::new("boundary", nb),
        ],
        eval: Arc::new(move |z: &[f64], out: &mut [f64]| {
            let ctx = &eq_ctx;
            let l = &ctx.layout;
            let tf = l.final_time(z);
            let s = 2.0 / tf;
            let d = ctx.basis.diff_matrix();
            let mut f = vec![0.0; nx];
            for (k, t) in ctx.collocation_times(tf).enumerate() {
                field.eval(l.node_row(z, k + 1), l.control_row(z, k), t, &mut f);
                for j in 0..nx {
                    let deriv: f64 = (0..l.node_rows).map(|i| d[(k, i)] * z[l.node_index(i, j)]).sum();
                    out[k * nx + j] = s * deriv - f[j];
                }
            }
            let mut xf = vec![0.0; nx];
            for (i, w) in ctx.end_weights.iter().enumerate() {
                for (j, x) in xf.iter_mut().enumerate() {
                    *x += w * z[l.node_index(i, j)];
                }
            }
            (ctx.ocp.boundary.eval)(l.node_row(z, 0), &xf, tf, &mut out[n * nx..]);
        }),
    };

    let ineq_ctx = Arc::clone(&ctx);
    let ineq = ConstraintSet {
        blocks: path_set(&ctx),
        eval: Arc::new(move |z: &[f64], out: &mut [f64]| {
            let ctx = &ineq_ctx;
            if let Some(p) = &ctx.ocp.path {
                let l = &ctx.layout;
                for k in 0..l.n {
                    (p.eval)(l.node_row(z, k + 1), l.control_row(z, k), &mut out[k * p.len..(k + 1) * p.len]);
                }
            }
        }),
    };

    let (lower, upper) = bounds_for(ocp, &layout);
    let initial_guess = initial_guess(ocp, &layout, &ctx.basis);
    Ok(Transcription {
        problem: NlpProblem {
            dim: layout.total_len,
            objective: objective_fn(&ctx),
            eq,
            ineq,
            lower,
            upper,
        },
        basis: Arc::clone(&ctx.basis),
        layout,
        initial_guess,
    })
}

/// Second-order Legendre-Gauss transcription.
pub fn transcribe_lg2(ocp: &OcpDefinition, n: usize) -> Result<Transcription, TranscriptionError> {
    let ctx = Arc::new(context(ocp, Scheme::Lg2, n)?);
    let layout = ctx.layout.clone();
    let nq = layout.n_q;
    let nb = ocp.boundary.len;

    let eq_ctx = Arc::clone(&ctx);
    let eq = ConstraintSet {
        blocks: vec![
            ConstraintBlock::new("collocation", n * nq),
            ConstraintBlock::new("boundary", nb),
        ],
        eval: Arc::new(move |z: &[f64], out: &mut [f64]| {
            let ctx = &eq_ctx;
            let l = &ctx.layout;
            let tf = l.final_time(z);
            let (q, qd, qdd) = ctx.lg2_node_derivatives(z);
            let model = &ctx.ocp.model;
            let mut g = vec![0.0; nq];
            let mut qr = vec![0.0; nq];
            let mut vr = vec![0.0; nq];
            for (k, t) in ctx.collocation_times(tf).enumerate() {
                let r = k + 1;
                for j in 0..nq {
                    qr[j] = q[(r, j)];
                    vr[j] = qd[(r, j)];
                }
                model.accel(&qr, &vr, l.control_row(z, k), t, &mut g);
                for j in 0..nq {
                    out[k * nq + j] = qdd[(r, j)] - g[j];
                }
            }
            let last = l.node_rows - 1;
            let x0 = Context::lg2_state(&q, &qd, 0);
            let xf = Context::lg2_state(&q, &qd, last);
            (ctx.ocp.boundary.eval)(&x0, &xf, tf, &mut out[n * nq..]);
        }),
    };

    // Velocities are not decision variables in LG2, so finite velocity
    // bounds become inequality rows at every node.
    let vel_bounds: Vec<(usize, f64, f64)> = ocp.state_bounds[nq..]
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.is_free())
        .map(|(j, b)| (j, b.lo, b.hi))
        .collect();
    let vel_rows: usize = vel_bounds
        .iter()
        .map(|&(_, lo, hi)| usize::from(lo.is_finite()) + usize::from(hi.is_finite()))
        .sum::<usize>()
        * layout.node_rows;
    let mut blocks = path_set(&ctx);
    if vel_rows > 0 {
        blocks.push(ConstraintBlock::new("velocity_bounds", vel_rows));
    }
    let ineq_ctx = Arc::clone(&ctx);
    let ineq = ConstraintSet {
        blocks,
        eval: Arc::new(move |z: &[f64], out: &mut [f64]| {
            let ctx = &ineq_ctx;
            let l = &ctx.layout;
            if ctx.ocp.path.is_none() && vel_bounds.is_empty() {
                return;
            }
            let (q, qd, _) = ctx.lg2_node_derivatives(z);
            let mut row = 0;
            if let Some(p) = &ctx.ocp.path {
                for k in 0..l.n {
                    let x = Context::lg2_state(&q, &qd, k + 1);
                    (p.eval)(&x, l.control_row(z, k), &mut out[row..row + p.len]);
                    row += p.len;
                }
            }
            for r in 0..l.node_rows {
                for &(j, lo, hi) in &vel_bounds {
                    if lo.is_finite() {
                        out[row] = lo - qd[(r, j)];
                        row += 1;
                    }
                    if hi.is_finite() {
                        out[row] = qd[(r, j)] - hi;
                        row += 1;
                    }
                }
            }
        }),
    };

    let (lower, upper) = bounds_for(ocp, &layout);
    let initial_guess = initial_guess(ocp, &layout, &ctx.basis);
    Ok(Transcription {
        problem: NlpProblem {
            dim: layout.total_len,
            objective: objective_fn(&ctx),
            eq,
            ineq,
            lower,
            upper,
        },
        basis: Arc::clone(&ctx.basis),
        layout,
        initial_guess,
    })
}

pub fn transcribe(ocp: &OcpDefinition, scheme: Scheme, n: usize) -> Result<Transcription, TranscriptionError> {
    match scheme {
        Scheme::Lg => transcribe_lg(ocp, n),
        Scheme::Lg2 => transcribe_lg2(ocp, n),
    }
}

/// Control value at some time, flagged when it lies outside the hull of
/// the Gauss points and is therefore an extrapolation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSample {
    pub values: Vec<f64>,
    pub extrapolated: bool,
}

/// Polynomial trajectory over `[0, t_f]`.
///
/// For LG2 the velocity is the exact derivative of the configuration
/// polynomial. For LG it is the independent interpolant of the `v` columns.
#[derive(Debug, Clone)]
pub struct Trajectory {
    scheme: Scheme,
    basis: Arc<CollocationBasis>,
    t_f: f64,
    n_q: usize,
    n_u: usize,
    /// LG: `X` (`(N+1) x 2n_q`); LG2: `Q` (`(N+2) x n_q`).
    nodes: DMatrix<f64>,
    controls: DMatrix<f64>,
    control_basis: LagrangeBasis,
    /// First and second tau-derivatives of the configuration polynomial at the nodes.
    config_d1: DMatrix<f64>,
    config_d2: DMatrix<f64>,
}

impl Trajectory {
    pub fn from_nodes(
        basis: Arc<CollocationBasis>,
        t_f: f64,
        nodes: DMatrix<f64>,
        controls: DMatrix<f64>,
    ) -> Result<Self, TranscriptionError> {
        if !(t_f > 0.0) {
            return Err(TranscriptionError::InvalidFinalTime(t_f));
        }
        let scheme = basis.scheme();
        if nodes.nrows() != basis.len() {
            return Err(TranscriptionError::LengthMismatch {
                expected: basis.len(),
                got: nodes.nrows(),
            });
        }
        if controls.nrows() != basis.n() {
            return Err(TranscriptionError::LengthMismatch {
                expected: basis.n(),
                got: controls.nrows(),
            });
        }
        let n_q = match scheme {
            Scheme::Lg => nodes.ncols() / 2,
            Scheme::Lg2 => nodes.ncols(),
        };
        let d = basis.node_diff_matrix();
        let q = nodes.columns(0, n_q).into_owned();
        let config_d1 = d * &q;
        let config_d2 = d * &config_d1;
        let control_basis = LagrangeBasis::new(basis.collocation_points())?;
        Ok(Self {
            scheme,
            n_q,
            n_u: controls.ncols(),
            t_f,
            nodes,
            controls,
            control_basis,
            config_d1,
            config_d2,
            basis,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn final_time(&self) -> f64 {
        self.t_f
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn basis(&self) -> &CollocationBasis {
        &self.basis
    }

    pub fn node_values(&self) -> &DMatrix<f64> {
        &self.nodes
    }

    pub fn control_values(&self) -> &DMatrix<f64> {
        &self.controls
    }

    pub fn node_times(&self) -> Vec<f64> {
        self.basis
            .nodes()
            .points()
            .iter()
            .map(|&tau| time_unmap(tau, self.t_f))
            .collect()
    }

    pub fn collocation_times(&self) -> Vec<f64> {
        self.basis
            .collocation_points()
            .iter()
            .map(|&tau| time_unmap(tau, self.t_f))
            .collect()
    }

    /// Maps `t` to `tau`, snapping to a node when the round trip through
    /// [`time_unmap`] lands within a few ulps of it.
    fn tau(&self, t: f64) -> f64 {
        let tau = -1.0 + 2.0 * t / self.t_f;
        self.basis
            .nodes()
            .points()
            .iter()
            .copied()
            .find(|x| (x - tau).abs() <= 4.0 * f64::EPSILON)
            .unwrap_or(tau)
    }

    fn interp_columns(&self, m: &DMatrix<f64>, cols: Range<usize>, tau: f64, scale: f64) -> Vec<f64> {
        let interp = self.basis.interpolant();
        let w = interp.basis_values(tau);
        cols.map(|c| scale * (0..m.nrows()).map(|r| w[r] * m[(r, c)]).sum::<f64>())
            .collect()
    }

    /// `q(t)`.
    pub fn config(&self, t: f64) -> Vec<f64> {
        let tau = self.tau(t);
        // Exact node hits return stored values bit for bit.
        if let Some(r) = self.basis.nodes().points().iter().position(|&x| x == tau) {
            return self.nodes.row(r).iter().take(self.n_q).copied().collect();
        }
        self.interp_columns(&self.nodes, 0..self.n_q, tau, 1.0)
    }

    /// Time derivative of the configuration polynomial.
    pub fn config_rate(&self, t: f64) -> Vec<f64> {
        self.interp_columns(&self.config_d1, 0..self.n_q, self.tau(t), 2.0 / self.t_f)
    }

    /// Second time derivative of the configuration polynomial.
    pub fn config_accel(&self, t: f64) -> Vec<f64> {
        let s = 2.0 / self.t_f;
        self.interp_columns(&self.config_d2, 0..self.n_q, self.tau(t), s * s)
    }

    /// The velocity the scheme carries: `q'(t)` for LG2, the `v` interpolant for LG.
    pub fn velocity(&self, t: f64) -> Vec<f64> {
        match self.scheme {
            Scheme::Lg2 => self.config_rate(t),
            Scheme::Lg => {
                let tau = self.tau(t);
                if let Some(r) = self.basis.nodes().points().iter().position(|&x| x == tau) {
                    return self.nodes.row(r).iter().skip(self.n_q).copied().collect();
                }
                self.interp_columns(&self.nodes, self.n_q..2 * self.n_q, tau, 1.0)
            }
        }
    }

    pub fn state(&self, t: f64) -> Vec<f64> {
        let mut x = self.config(t);
        x.extend(self.velocity(t));
        x
    }

    /// Control from the interpolant on the Gauss points.
    pub fn control(&self, t: f64) -> ControlSample {
        let tau = self.tau(t);
        let pts = self.control_basis.nodes();
        let extrapolated = tau < pts[0] || tau > pts[pts.len() - 1];
        let w = self.control_basis.basis_values(tau);
        let values = (0..self.n_u)
            .map(|j| (0..self.controls.nrows()).map(|k| w[k] * self.controls[(k, j)]).sum())
            .collect();
        ControlSample {
            values,
            extrapolated,
        }
    }
}

/// Rebuilds the trajectory encoded by decision vector `z`.
pub fn extract_trajectory(
    layout: &DecisionLayout,
    z: &[f64],
    basis: Arc<CollocationBasis>,
) -> Result<Trajectory, TranscriptionError> {
    if z.len() != layout.total_len {
        return Err(TranscriptionError::LengthMismatch {
            expected: layout.total_len,
            got: z.len(),
        });
    }
    if basis.scheme() != layout.scheme || basis.n() != layout.n {
        return Err(TranscriptionError::SchemeMismatch {
            basis: basis.scheme(),
            layout: layout.scheme,
        });
    }
    let nodes = DMatrix::from_row_slice(layout.node_rows, layout.node_cols, &z[..layout.controls_offset]);
    let controls = DMatrix::from_row_slice(
        layout.n,
        layout.n_u,
        &z[layout.controls_offset..layout.controls_offset + layout.n * layout.n_u],
    );
    Trajectory::from_nodes(basis, layout.final_time(z), nodes, controls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{
        cartpole_ocp, double_integrator_min_time_ocp, pendulum_ocp, BoundaryConstraint, CartPoleParams, Oscillator,
        PendulumParams,
    };

    fn oscillator_ocp(tf: f64) -> OcpDefinition {
        OcpDefinition::new(
            "oscillator",
            Arc::new(Oscillator { omega: 1.0 }),
            Cost::Integrand(Arc::new(|_x: &[f64], u: &[f64]| u[0] * u[0])),
            BoundaryConstraint::fixed_endpoints(vec![1.0, 0.0], vec![tf.cos(), -tf.sin()]),
            FinalTime::Fixed(tf),
        )
    }

    #[test]
    fn time_map_examples() {
        assert_eq!(time_map(0.0, 2.0).unwrap(), -1.0);
        assert_eq!(time_map(2.0, 2.0).unwrap(), 1.0);
        assert_eq!(time_map(0.5, 2.0).unwrap(), -0.5);
        assert!(time_map(2.1, 2.0).is_err());
        assert!(time_map(-0.1, 2.0).is_err());
        assert!(time_map(0.0, 0.0).is_err());
        let tf = 3.7;
        for i in 0..=10 {
            let t = tf * i as f64 / 10.0;
            assert!((time_unmap(time_map(t, tf).unwrap(), tf) - t).abs() <= 1e-15 * tf);
        }
    }

    #[test]
    fn pendulum_constraint_counts() {
        let ocp = pendulum_ocp(PendulumParams::default());
        let lg = transcribe_lg(&ocp, 5).unwrap();
        assert_eq!(lg.problem.eq.block_range("collocation"), Some(0..10));
        assert_eq!(lg.problem.n_eq(), 14);
        assert_eq!(lg.layout.total_len, 6 * 2 + 5 + 1);
        let lg2 = transcribe_lg2(&ocp, 5).unwrap();
        assert_eq!(lg2.problem.eq.block_range("collocation"), Some(0..5));
        assert_eq!(lg2.problem.n_eq(), 9);
        assert_eq!(lg2.layout.total_len, 7 + 5 + 1);
    }

    #[test]
    fn layout_slices_cover_vector() {
        for scheme in [Scheme::Lg, Scheme::Lg2] {
            for ft in [FinalTime::Fixed(1.0), FinalTime::Free { lo: 0.5, hi: 2.0 }] {
                let l = DecisionLayout::new(scheme, 7, 2, 1, ft);
                let mut covered = 0;
                for (_, r) in l.slices() {
                    assert_eq!(r.start, covered);
                    covered = r.end;
                }
                assert_eq!(covered, l.total_len);
            }
        }
    }

    fn sample_lg(tr: &Transcription, q: impl Fn(f64) -> f64, v: impl Fn(f64) -> f64, tf: f64) -> Vec<f64> {
        let mut z = vec![0.0; tr.layout.total_len];
        for (r, &tau) in tr.basis.nodes().points().iter().enumerate() {
            let t = time_unmap(tau, tf);
            z[tr.layout.node_index(r, 0)] = q(t);
            z[tr.layout.node_index(r, 1)] = v(t);
        }
        z
    }

    #[test]
    fn lg_residual_of_sampled_oscillator_solution() {
        let tf = 1.0;
        let ocp = oscillator_ocp(tf);
        let tr = transcribe_lg(&ocp, 16).unwrap();
        let z = sample_lg(&tr, f64::cos, |t| -t.sin(), tf);
        let c = tr.problem.eval_eq(&z);
        assert!(crate::nlp::max_abs(&c) < 1e-8, "{}", crate::nlp::max_abs(&c));
    }

    #[test]
    fn lg_constant_state_zero_dynamics() {
        let ocp = OcpDefinition::new(
            "still",
            Arc::new(crate::models::DoubleIntegrator),
            Cost::FinalTime,
            BoundaryConstraint::fixed_endpoints(vec![0.7, 0.0], vec![0.7, 0.0]),
            FinalTime::Fixed(3.0),
        );
        let tr = transcribe_lg(&ocp, 6).unwrap();
        let z = sample_lg(&tr, |_| 0.7, |_| 0.0, 3.0);
        let c = tr.problem.eval_eq(&z);
        for &x in &c[tr.problem.eq.block_range("collocation").unwrap()] {
            assert!(x.abs() < 1e-14);
        }
    }

    #[test]
    fn cartpole_zero_control_objective() {
        let ocp = cartpole_ocp(CartPoleParams::default());
        for scheme in [Scheme::Lg, Scheme::Lg2] {
            let tr = transcribe(&ocp, scheme, 8).unwrap();
            let mut z = tr.initial_guess.clone();
            for k in 0..8 {
                z[tr.layout.control_index(k, 0)] = 0.0;
            }
            assert_eq!(tr.problem.eval_objective(&z), 0.0);
        }
    }

    #[test]
    fn minimum_time_objective_is_final_time() {
        let ocp = double_integrator_min_time_ocp(1.0);
        for scheme in [Scheme::Lg, Scheme::Lg2] {
            let tr = transcribe(&ocp, scheme, 9).unwrap();
            let mut z = tr.initial_guess.clone();
            let TimeVar::Decision(i) = tr.layout.final_time else {
                panic!()
            };
            z[i] = 1.234_567;
            assert_eq!(tr.problem.eval_objective(&z), 1.234_567);
        }
    }

    #[test]
    fn unit_integrand_quadrature_gives_final_time() {
        let mut ocp = cartpole_ocp(CartPoleParams::default());
        ocp.cost = Cost::Integrand(Arc::new(|_: &[f64], _: &[f64]| 1.0));
        let tr = transcribe_lg2(&ocp, 11).unwrap();
        let v = tr.problem.eval_objective(&tr.initial_guess);
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lg2_quadratic_is_exact() {
        // q(tau) = tau^2 has q'' = 2 (2/tf)^2 in time; force g to that constant.
        let tf = 1.5;
        let s = 2.0 / tf;
        let model = Arc::new(crate::models::DoubleIntegrator);
        let ocp = OcpDefinition::new(
            "quad",
            model,
            Cost::FinalTime,
            BoundaryConstraint::fixed_endpoints(vec![1.0, -2.0 * s], vec![1.0, 2.0 * s]),
            FinalTime::Fixed(tf),
        );
        let n = 4;
        let tr = transcribe_lg2(&ocp, n).unwrap();
        let mut z = vec![0.0; tr.layout.total_len];
        for (r, &tau) in tr.basis.nodes().points().iter().enumerate() {
            z[tr.layout.node_index(r, 0)] = tau * tau;
        }
        for k in 0..n {
            z[tr.layout.control_index(k, 0)] = 2.0 * s * s;
        }
        let c = tr.problem.eval_eq(&z);
        assert!(crate::nlp::max_abs(&c) < 1e-12, "{c:?}");
    }

    fn lg2_oscillator_residual(n: usize, tf: f64) -> f64 {
        let ocp = oscillator_ocp(tf);
        let tr = transcribe_lg2(&ocp, n).unwrap();
        let mut z = vec![0.0; tr.layout.total_len];
        for (r, &tau) in tr.basis.nodes().points().iter().enumerate() {
            z[tr.layout.node_index(r, 0)] = time_unmap(tau, tf).cos();
        }
        let c = tr.problem.eval_eq(&z);
        crate::nlp::max_abs(&c[tr.problem.eq.block_range("collocation").unwrap()])
    }

    #[test]
    fn lg2_oscillator_residual_converges_spectrally() {
        let r4 = lg2_oscillator_residual(4, 2.0);
        let r8 = lg2_oscillator_residual(8, 2.0);
        let r16 = lg2_oscillator_residual(16, 2.0);
        assert!(r8 * 10.0 <= r4, "{r4} {r8}");
        assert!(r16 * 10.0 <= r8, "{r8} {r16}");
    }

    #[test]
    fn trajectory_interpolates_nodes_exactly() {
        let ocp = pendulum_ocp(PendulumParams::default());
        for scheme in [Scheme::Lg, Scheme::Lg2] {
            let tr = transcribe(&ocp, scheme, 6).unwrap();
            let mut z = tr.initial_guess.clone();
            for (i, x) in z.iter_mut().enumerate().take(tr.layout.controls_offset) {
                *x += 0.01 * (i as f64).sin();
            }
            let traj = extract_trajectory(&tr.layout, &z, Arc::clone(&tr.basis)).unwrap();
            for (r, t) in traj.node_times().iter().enumerate() {
                assert_eq!(traj.config(*t)[0], z[tr.layout.node_index(r, 0)]);
            }
        }
    }

    #[test]
    fn lg2_velocity_matches_finite_difference() {
        let ocp = cartpole_ocp(CartPoleParams::default());
        let tr = transcribe_lg2(&ocp, 9).unwrap();
        let mut z = tr.initial_guess.clone();
        for (i, x) in z.iter_mut().enumerate() {
            *x += 0.3 * ((i * 7) as f64).cos();
        }
        let traj = extract_trajectory(&tr.layout, &z, Arc::clone(&tr.basis)).unwrap();
        let tf = traj.final_time();
        let h = 1e-6 * tf;
        for i in 0..50 {
            let t = tf * (0.01 + 0.98 * ((i as f64 * 0.618_034) % 1.0));
            let v = traj.velocity(t);
            let qp = traj.config(t + h);
            let qm = traj.config(t - h);
            for j in 0..2 {
                let fd = (qp[j] - qm[j]) / (2.0 * h);
                assert!((fd - v[j]).abs() < 1e-5, "t={t} j={j} fd={fd} v={}", v[j]);
            }
        }
    }

    #[test]
    fn lg_velocity_can_disagree_with_config_rate() {
        let ocp = pendulum_ocp(PendulumParams::default());
        let tr = transcribe_lg(&ocp, 5).unwrap();
        let mut z = tr.initial_guess.clone();
        // Configuration linear in tau, but the v column deliberately zero.
        for r in 0..tr.layout.node_rows {
            z[tr.layout.node_index(r, 1)] = 0.0;
        }
        let traj = extract_trajectory(&tr.layout, &z, Arc::clone(&tr.basis)).unwrap();
        let t = 0.37 * traj.final_time();
        assert!((traj.config_rate(t)[0] - traj.velocity(t)[0]).abs() > 0.1);
    }

    #[test]
    fn control_extrapolation_flag() {
        let ocp = pendulum_ocp(PendulumParams::default());
        let tr = transcribe_lg2(&ocp, 5).unwrap();
        let traj = extract_trajectory(&tr.layout, &tr.initial_guess, Arc::clone(&tr.basis)).unwrap();
        assert!(traj.control(0.0).extrapolated);
        assert!(traj.control(traj.final_time()).extrapolated);
        assert!(!traj.control(0.5 * traj.final_time()).extrapolated);
    }

    #[test]
    fn extract_rejects_bad_length() {
        let ocp = pendulum_ocp(PendulumParams::default());
        let tr = transcribe_lg2(&ocp, 5).unwrap();
        let err = extract_trajectory(&tr.layout, &tr.initial_guess[1..], Arc::clone(&tr.basis)).unwrap_err();
        assert!(matches!(err, TranscriptionError::LengthMismatch { .. }));
    }
}
