//! Canonical JSON export of an [`NlpProblem`] for external solver backends.
//!
//! Callbacks cannot be serialized, so the export carries the problem shape
//! (dimensions, bounds, constraint blocks), a description of the dense
//! callback protocol an adapter must drive, and optionally a probe: one
//! stored point with its in-process evaluations so an adapter can verify
//! it is wired to the same functions. Unbounded sides are written as `null`.

use serde::{Deserialize, Serialize};

use super::{ConstraintSet, NlpError, NlpProblem};

pub const NLP_SCHEMA: &str = "lgcol.nlp/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockExport {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub z: Vec<f64>,
    pub objective: f64,
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallbackProtocol {
    pub objective: String,
    pub eq: String,
    pub ineq: String,
    pub jacobian: String,
}

impl Default for CallbackProtocol {
    fn default() -> Self {
        Self {
            objective: "f(z: [dim]) -> f64".into(),
            eq: "c(z: [dim]) -> [n_eq], feasible when = 0".into(),
            ineq: "h(z: [dim]) -> [n_ineq], feasible when <= 0".into(),
            jacobian: "dense row-major, rows = outputs, cols = variables; central differences unless the backend supplies its own".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpExport {
    pub schema: String,
    pub dim: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    pub eq_blocks: Vec<BlockExport>,
    pub ineq_blocks: Vec<BlockExport>,
    pub protocol: CallbackProtocol,
    pub probe: Option<Probe>,
}

fn blocks(set: &ConstraintSet) -> Vec<BlockExport> {
    let mut start = 0;
    set.blocks
        .iter()
        .map(|b| {
            let e = BlockExport {
                name: b.name.clone(),
                start,
                len: b.len,
            };
            start += b.len;
            e
        })
        .collect()
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Describes `problem` in the canonical export format, probing it at
/// `probe_at` when given.
pub fn backend_adapter(problem: &NlpProblem, probe_at: Option<&[f64]>) -> NlpExport {
    NlpExport {
        schema: NLP_SCHEMA.to_string(),
        dim: problem.dim,
        n_eq: problem.n_eq(),
        n_ineq: problem.n_ineq(),
        lower: problem.lower.iter().map(|&x| finite_or_none(x)).collect(),
        upper: problem.upper.iter().map(|&x| finite_or_none(x)).collect(),
        eq_blocks: blocks(&problem.eq),
        ineq_blocks: blocks(&problem.ineq),
        protocol: CallbackProtocol::default(),
        probe: probe_at.map(|z| Probe {
            z: z.to_vec(),
            objective: problem.eval_objective(z),
            eq: problem.eval_eq(z),
            ineq: problem.eval_ineq(z),
        }),
    }
}

impl NlpExport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("export is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, NlpError> {
        let e: Self = serde_json::from_str(text).map_err(|e| NlpError::Export(e.to_string()))?;
        if e.schema != NLP_SCHEMA {
            return Err(NlpError::Export(format!(
                "unsupported schema '{}' (expected {NLP_SCHEMA})",
                e.schema
            )));
        }
        if e.lower.len() != e.dim || e.upper.len() != e.dim {
            return Err(NlpError::Export("bound vectors do not match dim".into()));
        }
        Ok(e)
    }

    pub fn lower_bounds(&self) -> Vec<f64> {
        self.lower
            .iter()
            .map(|b| b.unwrap_or(f64::NEG_INFINITY))
            .collect()
    }

    pub fn upper_bounds(&self) -> Vec<f64> {
        self.upper.iter().map(|b| b.unwrap_or(f64::INFINITY)).collect()
    }

    /// Checks that `problem` has the exported shape and, if a probe is
    /// stored, reproduces its evaluations bit for bit.
    pub fn matches(&self, problem: &NlpProblem) -> bool {
        let shape = self.dim == problem.dim
            && self.n_eq == problem.n_eq()
            && self.n_ineq == problem.n_ineq()
            && self.lower_bounds() == problem.lower
            && self.upper_bounds() == problem.upper;
        let probe = self.probe.as_ref().is_none_or(|p| {
            p.objective.to_bits() == problem.eval_objective(&p.z).to_bits()
                && bits(&p.eq) == bits(&problem.eval_eq(&p.z))
                && bits(&p.ineq) == bits(&problem.eval_ineq(&p.z))
        });
        shape && probe
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}
