use std::path::PathBuf;

use thiserror::Error;

/// Failures of a command, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input that fails validation (exit code 2).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact {}: run `mrp fit` first", .0.display())]
    MissingArtifact(PathBuf),

    #[error("malformed artifact {}: {msg}", path.display())]
    Artifact { path: PathBuf, msg: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] mrp_core::error::Error),
}

impl CliError {
    pub fn config(msg: impl ToString) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration and validation errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
