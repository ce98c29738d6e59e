use std::fmt;

use wwbl_model::ModelError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NON_FINITE: i32 = 4;
pub const EXIT_CHECKPOINT: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(message: String) -> Self {
        Self {
            code: EXIT_CONFIG,
            message,
        }
    }

    pub fn data(message: String) -> Self {
        Self {
            code: EXIT_DATA,
            message,
        }
    }

    pub fn checkpoint(message: String) -> Self {
        Self {
            code: EXIT_CHECKPOINT,
            message,
        }
    }

    pub fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        Self::data(format!("{}: {e}", path.display()))
    }

    /// Keep the message, replace the exit code.
    pub fn with_code(self, code: i32) -> Self {
        Self { code, ..self }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = match &e {
            ModelError::NonFiniteLoss { .. } => EXIT_NON_FINITE,
            ModelError::Checkpoint(_) => EXIT_CHECKPOINT,
            ModelError::Record { .. }
            | ModelError::Io { .. }
            | ModelError::EmptyDataset
            | ModelError::EmptyEvaluation => EXIT_DATA,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<wwbl_core::CoreError> for CliError {
    fn from(e: wwbl_core::CoreError) -> Self {
        ModelError::from(e).into()
    }
}
