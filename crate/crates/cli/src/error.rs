use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("run failed: {0}")]
    Run(String),
}

impl CliError {
    /// Process exit code: 2 configuration, 3 I/O, 4 run failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Run(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<pspo_core::Error> for CliError {
    fn from(e: pspo_core::Error) -> Self {
        match e {
            pspo_core::Error::Io(msg) => CliError::Io {
                path: PathBuf::new(),
                source: io::Error::other(msg),
            },
            other => CliError::Run(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
