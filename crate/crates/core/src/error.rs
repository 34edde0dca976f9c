use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input document. `path` points into the document.
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("model failed validation:\n{0}")]
    Validation(ValidationReport),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("partition is not in canonical (taboo, forbidden, target) order")]
    OrderingMismatch,

    #[error("assignment is missing taboo state `{0}`")]
    MissingState(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The taboo block contains a recurrent class, so the Green series diverges.
    #[error("chain is not transient on the taboo set (spectral radius {spectral_radius:.12})")]
    NotTransient { spectral_radius: f64 },

    #[error("no convergence after {iterations} iterations (last step {last_step:e})")]
    MaxIterExceeded {
        iterations: usize,
        last_step: f64,
        last_iterate: Vec<f64>,
    },

    #[error("iterates diverge: norm {norm:e} exceeds bound {bound:e} at iteration {iteration}")]
    Diverging {
        iteration: usize,
        norm: f64,
        bound: f64,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("enumeration of {count} pure policies exceeds cap {cap}")]
    CapExceeded { count: u128, cap: u64 },

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("simplex pivot {pivot:e} below stability threshold")]
    NumericalInstability { pivot: f64 },

    #[error("path enumeration exceeded node budget {budget}")]
    PathExplosion { budget: usize },
}
