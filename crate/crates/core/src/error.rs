use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("linear system is singular or not positive definite: {0}")]
    Singular(String),

    #[error("integration became unstable after s = {last_stable_s}")]
    Unstable { last_stable_s: f64 },

    #[error("adaptive step size underflow at s = {s}")]
    StepUnderflow { s: f64 },

    #[error("modulation did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("modulation guess rejected: {0}")]
    IllSeparated(String),

    #[error("decomposition lost at s = {last_good_s}: {reason}")]
    DecompositionLost { last_good_s: f64, reason: String },

    #[error("not enough samples: {0}")]
    InsufficientSamples(String),
}

pub type Result<T> = std::result::Result<T, Error>;
