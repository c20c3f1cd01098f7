use thiserror::Error;

/// Errors raised by the decomposition library.
#[derive(Debug, Error)]
pub enum GlossError {
    #[error("mode index {mode} out of range for a {order}-mode tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid shape {0:?}: extents must be >= 1 and at least one mode is required")]
    InvalidShape(Vec<usize>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("solver produced a non-finite iterate at iteration {iteration}: {what}")]
    SolverNonFinite { iteration: usize, what: String },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("scoring failed for fiber {coords:?}: {reason}")]
    Fiber { coords: Vec<usize>, reason: String },

    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<GlossError>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = GlossError> = std::result::Result<T, E>;
