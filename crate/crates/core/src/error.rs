use thiserror::Error;

/// Errors raised by the laboratory kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    /// Malformed or out-of-range input.
    #[error("invalid input: {0}")]
    Input(String),

    /// The coefficient matrix lost positive definiteness (or λ ≤ 0).
    #[error("structure violation at {location}: {detail}")]
    Structure { location: String, detail: String },

    /// Newton iteration did not reach the residual tolerance.
    #[error(
        "no convergence after {iterations} Newton iterations (residual {residual:e}): {reason}"
    )]
    Convergence {
        iterations: usize,
        residual: f64,
        reason: String,
    },

    /// Expression parsing or evaluation failure.
    #[error("expression error: {0}")]
    Expr(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Input(msg.into()))
}
