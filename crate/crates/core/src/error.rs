use thiserror::Error;

/// Errors raised across the explanation toolkit.
#[derive(Debug, Error)]
pub enum RdeError {
    #[error("block structure mismatch at block {block}: expected {expected} entries, found {found}")]
    BlockMismatch {
        block: usize,
        expected: usize,
        found: usize,
    },

    #[error("block count mismatch: expected {expected} blocks, found {found}")]
    BlockCount { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite distortion at sample {sample}")]
    NonFiniteDistortion { sample: usize },

    #[error("non-finite objective at step {step}")]
    NonFiniteObjective { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("analysis map unavailable: {0}")]
    AnalysisUnavailable(String),

    #[error("ill-conditioned system (condition number {0:e})")]
    IllConditioned(f64),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("image error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, RdeError>;

pub(crate) fn invalid(msg: impl Into<String>) -> RdeError {
    RdeError::InvalidArgument(msg.into())
}
