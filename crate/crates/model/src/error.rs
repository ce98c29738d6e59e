use thiserror::Error;
use wwbl_core::CoreError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("tensor backend: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("network weights are not initialized: {0}")]
    UninitializedWeights(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss { epoch: usize, step: usize, detail: String },
    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub(crate) fn mismatch(expected: impl ToString, actual: impl ToString) -> ModelError {
    ModelError::DimensionMismatch {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
