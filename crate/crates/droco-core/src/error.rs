//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by validation, solvers, and dataset handling.
#[derive(Debug, Error)]
pub enum Error {
    /// An MDP invariant failed; the message names the first violation.
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    /// A probability vector or table row is malformed.
    #[error("row not stochastic at {context}: sums to {sum}")]
    NotStochastic { context: String, sum: f64 },

    /// Inputs disagree on dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A parameter fell outside its documented range.
    #[error("parameter out of range: {0}")]
    BadParameter(String),

    /// No action available in the behavior support where one is required.
    #[error("empty action support at state {state}")]
    EmptySupport { state: usize },

    /// An iterative solver hit its sweep cap before reaching tolerance.
    #[error("{solver} did not converge within {sweeps} sweeps (residual {residual})")]
    NoConvergence {
        solver: &'static str,
        sweeps: usize,
        residual: f64,
    },

    /// A value table left the admissible range during training.
    #[error("divergence guard tripped at step {step}: |{table}[{index}]| = {value} exceeds {bound}")]
    Diverged {
        step: usize,
        table: &'static str,
        index: String,
        value: f64,
        bound: f64,
    },

    /// A dataset file could not be parsed.
    #[error("dataset parse error at line {line}: {message}")]
    DatasetParse { line: usize, message: String },

    /// Underlying IO failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Underlying JSON failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
