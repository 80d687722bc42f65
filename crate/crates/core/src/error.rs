use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TseError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TseError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot ingest {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        reason: String,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl TseError {
    /// Process exit code for the CLI, one per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            TseError::InvalidInput(_) => 2,
            TseError::Shape(_) => 3,
            TseError::Config(_) => 4,
            TseError::Ingest { .. } | TseError::Io(_) => 5,
            TseError::Data(_) => 6,
            TseError::TrainingDiverged { .. } => 7,
            TseError::InvalidState(_) => 8,
        }
    }

    pub(crate) fn ingest(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        TseError::Ingest {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
