use thiserror::Error;

/// Errors raised by the solvers and verification tools.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("field shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("every sample was degenerate (‖Δv‖ below {threshold:e})")]
    DegenerateSamples { threshold: f64 },

    #[error("missing constant {name} for q = {q}")]
    MissingConstant { name: &'static str, q: f64 },

    #[error("Poisson solve did not converge: residual {residual:e} after {iterations} iterations")]
    PoissonNotConverged { iterations: usize, residual: f64 },

    #[error("ratio undefined: {0}")]
    UndefinedRatio(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
