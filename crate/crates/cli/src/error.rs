use std::path::PathBuf;

use mecm::MecmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("{}: line {line}, column '{column}': {message}", path.display())]
    Data {
        path: PathBuf,
        line: usize,
        column: String,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },

    #[error(transparent)]
    Model(#[from] MecmError),
}

impl CliError {
    /// Process exit status: 2 for invalid arguments, 1 for other failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Model(MecmError::InvalidRank { .. })
            | CliError::Model(MecmError::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
