//! Dense nonlinear programs and the reference augmented-Lagrangian solver.
//!
//! A program is
//!
//! ```text
//! minimize f(z)  subject to  c(z) = 0,  h(z) <= 0,  lower <= z <= upper
//! ```
//!
//! with every function supplied as a pure callback. Derivatives are taken
//! by central finite differences.

mod export;
mod solver;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

pub use export::{backend_adapter, BlockExport, NlpExport, Probe, NLP_SCHEMA};
pub use solver::{solve, HessianMode, NlpBackend, ReferenceSolver, SolveOptions, SolveResult, SolveStatus};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NlpError {
    #[error("non-finite value in output {row} while differentiating along variable {col}")]
    NonFiniteDerivative { row: usize, col: usize },
    #[error("non-finite {what} at the evaluation point (entry {index})")]
    NonFinite { what: &'static str, index: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("lower bound exceeds upper bound for variable {0}")]
    InvalidBounds(usize),
    #[error("export format error: {0}")]
    Export(String),
}

/// A named contiguous range of constraint rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintBlock {
    pub name: String,
    pub len: usize,
}

impl ConstraintBlock {
    pub fn new(name: impl Into<String>, len: usize) -> Self {
        Self {
            name: name.into(),
            len,
        }
    }
}

#[derive(Clone)]
pub struct ConstraintSet {
    pub blocks: Vec<ConstraintBlock>,
    pub eval: VectorFn,
}

impl ConstraintSet {
    pub fn empty() -> Self {
        Self {
            blocks: Vec::new(),
            eval: Arc::new(|_, _| {}),
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eval_vec(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        (self.eval)(z, &mut out);
        out
    }

    /// Rows spanned by the block called `name`.
    pub fn block_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for b in &self.blocks {
            if b.name == name {
                return Some(start..start + b.len);
            }
            start += b.len;
        }
        None
    }
}

impl fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSet")
            .field("blocks", &self.blocks)
            .finish()
    }
}

#[derive(Clone)]
pub struct NlpProblem {
    pub dim: usize,
    pub objective: ScalarFn,
    pub eq: ConstraintSet,
    /// Feasible when every entry is `<= 0`.
    pub ineq: ConstraintSet,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl fmt::Debug for NlpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NlpProblem")
            .field("dim", &self.dim)
            .field("eq", &self.eq)
            .field("ineq", &self.ineq)
            .finish_non_exhaustive()
    }
}

impl NlpProblem {
    pub fn n_eq(&self) -> usize {
        self.eq.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq.len()
    }

    pub fn eval_objective(&self, z: &[f64]) -> f64 {
        (self.objective)(z)
    }

    pub fn eval_eq(&self, z: &[f64]) -> Vec<f64> {
        self.eq.eval_vec(z)
    }

    pub fn eval_ineq(&self, z: &[f64]) -> Vec<f64> {
        self.ineq.eval_vec(z)
    }

    /// Max-norm of `c(z)`.
    pub fn eq_violation(&self, z: &[f64]) -> f64 {
        max_abs(&self.eval_eq(z))
    }

    /// Max of `h(z)^+`, zero when all inequalities hold.
    pub fn ineq_violation(&self, z: &[f64]) -> f64 {
        self.eval_ineq(z).iter().fold(0.0, |m, &h| m.max(h))
    }

    pub fn check(&self) -> Result<(), NlpError> {
        for (what, v) in [("lower", &self.lower), ("upper", &self.upper)] {
            if v.len() != self.dim {
                return Err(NlpError::DimensionMismatch {
                    what,
                    expected: self.dim,
                    got: v.len(),
                });
            }
        }
        for i in 0..self.dim {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(NlpError::InvalidBounds(i));
            }
        }
        Ok(())
    }

    /// Clips `z` into the variable bounds.
    pub fn project(&self, z: &mut [f64]) {
        for ((x, &lo), &hi) in z.iter_mut().zip(&self.lower).zip(&self.upper) {
            *x = x.clamp(lo, hi);
        }
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, &x| m.max(x.abs()))
}

/// Central-difference Jacobian of `f: R^n -> R^m` at `z`, rows = outputs.
///
/// Step for variable `j` is `eps^(1/3) * max(1, |z_j|)`.
pub fn differentiate<F>(f: F, m: usize, z: &[f64]) -> Result<DMatrix<f64>, NlpError>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = z.len();
    let base = f64::EPSILON.cbrt();
    let mut jac = DMatrix::zeros(m, n);
    let mut zp = z.to_vec();
    let mut fp = vec![0.0; m];
    let mut fm = vec![0.0; m];
    for j in 0..n {
        let h = base * z[j].abs().max(1.0);
        zp[j] = z[j] + h;
        // Effective step after rounding of z + h.
        let hp = zp[j] - z[j];
        f(&zp, &mut fp);
        zp[j] = z[j] - h;
        let hm = z[j] - zp[j];
        f(&zp, &mut fm);
        zp[j] = z[j];
        for i in 0..m {
            let d = (fp[i] - fm[i]) / (hp + hm);
            if !(fp[i].is_finite() && fm[i].is_finite() && d.is_finite()) {
                return Err(NlpError::NonFiniteDerivative { row: i, col: j });
            }
            jac[(i, j)] = d;
        }
    }
    Ok(jac)
}
