//! Legendre-Gauss pseudospectral collocation for optimal control of
//! second-order systems.
//!
//! Two transcriptions are provided side by side: the standard first-order
//! scheme, which collocates `x' = f(x, u, t)` on the state `x = (q, v)`, and
//! a second-order scheme that interpolates only the configuration `q` on
//! the Gauss points plus both interval ends and collocates
//! `q'' = g(q, q', u, t)` directly.

pub mod analysis;
pub mod basis;
pub mod cli;
pub mod ivp;
pub mod models;
pub mod nlp;
pub mod transcription;

pub use basis::{build_basis, CollocationBasis, Scheme};
pub use models::{OcpDefinition, SecondOrderModel};
pub use nlp::{solve, NlpProblem, SolveOptions, SolveResult, SolveStatus};
pub use transcription::{extract_trajectory, transcribe, Trajectory};
