//! Legendre-Gauss nodes, quadrature weights and differentiation matrices.
//!
//! Two node layouts are supported on the reference interval `[-1, 1]`:
//!
//! * [`Scheme::Lg`]: the `N` Gauss points plus the initial point `-1`
//!   (`B = N + 1` basis nodes). The differentiation matrix has shape
//!   `N x (N + 1)` and evaluates derivatives at the Gauss points only.
//! * [`Scheme::Lg2`]: the `N` Gauss points plus both endpoints
//!   (`B = N + 2` basis nodes). The differentiation matrix is square and
//!   evaluates derivatives at every node.
//!
//! Interpolation uses the barycentric form; differentiation matrices are
//! built from the barycentric weights.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported number of collocation points.
pub const MAX_COLLOCATION_POINTS: usize = 64;

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BasisError {
    #[error("collocation count must be in 1..={max}, got {n}")]
    InvalidCount { n: usize, max: usize },
    #[error("Newton iteration for root {index} of P_{n} did not converge after {iterations} iterations")]
    NoConvergence {
        n: usize,
        index: usize,
        iterations: usize,
    },
    #[error("expected {expected} node values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("interpolation nodes must be distinct (nodes {0} and {1} coincide)")]
    DuplicateNodes(usize, usize),
}

/// Collocation scheme: first-order Legendre-Gauss or its second-order variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Lg,
    Lg2,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Lg => "lg",
            Scheme::Lg2 => "lg2",
        }
    }

    /// Number of basis nodes for `n` collocation points.
    pub fn basis_len(self, n: usize) -> usize {
        match self {
            Scheme::Lg => n + 1,
            Scheme::Lg2 => n + 2,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lg" => Ok(Scheme::Lg),
            "lg2" => Ok(Scheme::Lg2),
            other => Err(format!("unknown scheme '{other}' (expected lg or lg2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Gauss points only.
    CollocationOnly,
    /// `-1` followed by the Gauss points.
    LgFirstOrder,
    /// `-1`, the Gauss points, then `+1`.
    Lg2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    points: Vec<f64>,
    kind: NodeKind,
}

impl NodeSet {
    pub fn new(gauss: &[f64], kind: NodeKind) -> Self {
        let mut points = Vec::with_capacity(gauss.len() + 2);
        if kind != NodeKind::CollocationOnly {
            points.push(-1.0);
        }
        points.extend_from_slice(gauss);
        if kind == NodeKind::Lg2 {
            points.push(1.0);
        }
        Self { points, kind }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Evaluates the Legendre polynomial `P_n` and its derivative at `tau`
/// with the three-term recurrence.
pub fn legendre_eval(n: usize, tau: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, tau);
    let (mut dp_prev, mut dp) = (0.0, 1.0);
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * tau * p - kf * p_prev) / (kf + 1.0);
        // P'_{k+1} = P'_{k-1} + (2k + 1) P_k holds on the closed interval.
        let dp_next = dp_prev + (2.0 * kf + 1.0) * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    (p, dp)
}

fn check_count(n: usize) -> Result<(), BasisError> {
    if n == 0 || n > MAX_COLLOCATION_POINTS {
        return Err(BasisError::InvalidCount {
            n,
            max: MAX_COLLOCATION_POINTS,
        });
    }
    Ok(())
}

/// Roots of `P_n` in increasing order.
pub fn lg_points(n: usize) -> Result<Vec<f64>, BasisError> {
    check_count(n)?;
    let nf = n as f64;
    let mut roots = Vec::with_capacity(n);
    for i in 1..=n {
        let mut x = -(std::f64::consts::PI * (i as f64 - 0.25) / (nf + 0.5)).cos();
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, dp) = legendre_eval(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < NEWTON_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(BasisError::NoConvergence {
                n,
                index: i,
                iterations: NEWTON_MAX_ITER,
            });
        }
        roots.push(x);
    }
    // Mirror the lower half so the node set is exactly antisymmetric.
    for i in 0..n / 2 {
        let m = 0.5 * (roots[n - 1 - i] - roots[i]);
        roots[i] = -m;
        roots[n - 1 - i] = m;
    }
    if n % 2 == 1 {
        roots[n / 2] = 0.0;
    }
    Ok(roots)
}

fn weights_for(n: usize, points: &[f64]) -> Vec<f64> {
    points
        .iter()
        .map(|&x| {
            let (_, dp) = legendre_eval(n, x);
            2.0 / ((1.0 - x * x) * dp * dp)
        })
        .collect()
}

/// Gauss-Legendre quadrature weights for `n` points.
pub fn lg_weights(n: usize) -> Result<Vec<f64>, BasisError> {
    let points = lg_points(n)?;
    Ok(weights_for(n, &points))
}

/// Gauss-Legendre points and weights together.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>), BasisError> {
    let points = lg_points(n)?;
    let weights = weights_for(n, &points);
    Ok((points, weights))
}

/// Barycentric Lagrange interpolation on an arbitrary set of distinct nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeBasis {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl LagrangeBasis {
    pub fn new(nodes: &[f64]) -> Result<Self, BasisError> {
        let b = nodes.len();
        let mut weights = vec![1.0; b];
        for j in 0..b {
            for k in 0..b {
                if j == k {
                    continue;
                }
                let diff = nodes[j] - nodes[k];
                if diff == 0.0 {
                    return Err(BasisError::DuplicateNodes(j.min(k), j.max(k)));
                }
                weights[j] /= diff;
            }
        }
        let scale = weights.iter().fold(0.0_f64, |m, w| m.max(w.abs()));
        if scale > 0.0 {
            weights.iter_mut().for_each(|w| *w /= scale);
        }
        Ok(Self {
            nodes: nodes.to_vec(),
            weights,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Values of every Lagrange basis polynomial at `tau`.
    pub fn basis_values(&self, tau: f64) -> Vec<f64> {
        if let Some(j) = self.nodes.iter().position(|&x| x == tau) {
            let mut out = vec![0.0; self.len()];
            out[j] = 1.0;
            return out;
        }
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w / (tau - x))
            .collect();
        let denom: f64 = terms.iter().sum();
        terms.into_iter().map(|t| t / denom).collect()
    }

    /// Evaluates the interpolant through `(nodes[i], values[i])` at `tau`.
    pub fn eval(&self, values: &[f64], tau: f64) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&x, &w), &v) in self.nodes.iter().zip(&self.weights).zip(values) {
            let d = tau - x;
            if d == 0.0 {
                return v;
            }
            let t = w / d;
            num += t * v;
            den += t;
        }
        num / den
    }

    /// Square matrix `D` with `D[k][i] = L_i'(x_k)`.
    pub fn diff_matrix(&self) -> DMatrix<f64> {
        let b = self.len();
        let mut d = DMatrix::zeros(b, b);
        for k in 0..b {
            let mut diag = 0.0;
            for i in 0..b {
                if i == k {
                    continue;
                }
                let entry = (self.weights[i] / self.weights[k]) / (self.nodes[k] - self.nodes[i]);
                d[(k, i)] = entry;
                diag -= entry;
            }
            d[(k, k)] = diag;
        }
        d
    }
}

/// Nodes, weights and differentiation matrix for one scheme and `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationBasis {
    scheme: Scheme,
    n: usize,
    nodes: NodeSet,
    quad_weights: Vec<f64>,
    interp: LagrangeBasis,
    node_diff: DMatrix<f64>,
    diff: DMatrix<f64>,
}

/// Assembles the collocation basis for `scheme` with `n` Gauss points.
pub fn build_basis(scheme: Scheme, n: usize) -> Result<CollocationBasis, BasisError> {
    let (gauss, quad_weights) = gauss_legendre(n)?;
    let kind = match scheme {
        Scheme::Lg => NodeKind::LgFirstOrder,
        Scheme::Lg2 => NodeKind::Lg2,
    };
    let nodes = NodeSet::new(&gauss, kind);
    let interp = LagrangeBasis::new(nodes.points())?;
    let node_diff = interp.diff_matrix();
    let diff = match scheme {
        // Rows 1..=N: derivatives at the collocation points only.
        Scheme::Lg => node_diff.rows(1, n).into_owned(),
        Scheme::Lg2 => node_diff.clone(),
    };
    Ok(CollocationBasis {
        scheme,
        n,
        nodes,
        quad_weights,
        interp,
        node_diff,
        diff,
    })
}

impl CollocationBasis {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Number of collocation points `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of basis nodes `B`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &NodeSet {
        &self.nodes
    }

    /// The Gauss points, i.e. nodes `1..=N`.
    pub fn collocation_points(&self) -> &[f64] {
        &self.nodes.points()[1..=self.n]
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    pub fn bary_weights(&self) -> &[f64] {
        self.interp.weights()
    }

    pub fn interpolant(&self) -> &LagrangeBasis {
        &self.interp
    }

    /// `D` (`N x (N+1)`) for [`Scheme::Lg`], `D*` (`(N+2) x (N+2)`) for [`Scheme::Lg2`].
    pub fn diff_matrix(&self) -> &DMatrix<f64> {
        &self.diff
    }

    /// Square differentiation matrix evaluated at every basis node.
    pub fn node_diff_matrix(&self) -> &DMatrix<f64> {
        &self.node_diff
    }

    pub fn interp_eval(&self, node_values: &[f64], tau: f64) -> Result<f64, BasisError> {
        self.check_len(node_values.len())?;
        Ok(self.interp.eval(node_values, tau))
    }

    /// `D * node_values`; derivatives are with respect to `tau`.
    pub fn diff_values(&self, node_values: &[f64]) -> Result<Vec<f64>, BasisError> {
        self.check_len(node_values.len())?;
        Ok(mat_vec(&self.diff, node_values))
    }

    fn check_len(&self, got: usize) -> Result<(), BasisError> {
        if got != self.len() {
            return Err(BasisError::LengthMismatch {
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)] * v[c]).sum())
        .collect()
}
