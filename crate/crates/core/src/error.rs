use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid phrase: text is empty after trimming")]
    InvalidPhrase,
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("invalid bounding box {x},{y},{w},{h}: {reason}")]
    InvalidBox {
        x: i64,
        y: i64,
        w: i64,
        h: i64,
        reason: String,
    },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
