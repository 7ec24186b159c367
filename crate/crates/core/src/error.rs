//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by model construction, estimation, and reporting.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("M-step failure in {component}: {detail}")]
    MStepFailure {
        component: &'static str,
        detail: String,
    },

    #[error("all starts failed: {}", diagnostics.join("; "))]
    FitFailure { diagnostics: Vec<String> },

    #[error("parameter not supported for this operation: {0}")]
    UnsupportedParam(String),

    #[error(
        "constrained fit beat the unconstrained optimum (D = {d}); restart the full fit"
    )]
    NegativeLrStatistic { d: f64 },
}

impl Error {
    pub(crate) fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            actual,
        }
    }
}
