use thiserror::Error;

/// Errors produced by the denoising library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a mathematical precondition (non-positive intensity,
    /// unsupported power index, non-finite value, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The fractional power or Gamma denominator of a posterior-mean formula
    /// was non-positive at the given flat pixel index.
    #[error("singular estimate at pixel {index}: {reason}")]
    SingularEstimate { index: usize, reason: String },

    /// Blind estimation could not produce a value (empty mask, too few valid
    /// pixels, all roots non-finite, unknown noise model).
    #[error("estimation failure: {0}")]
    EstimationFailure(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: loss = {loss}")]
    TrainingDivergence { step: usize, loss: f64 },

    /// Successive quadrature refinements disagreed above tolerance.
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape { expected: (usize, usize), actual: (usize, usize) },

    /// Configuration or argument validation failed.
    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
