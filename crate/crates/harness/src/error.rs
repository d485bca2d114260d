use std::path::PathBuf;

use planbudget_gateway::GatewayError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    /// Every offending dataset line, reported together.
    #[error("dataset {} is invalid:\n  {}", path.display(), problems.join("\n  "))]
    Dataset { path: PathBuf, problems: Vec<String> },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] planbudget_core::Error),

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error("evaluator failed: {0}")]
    Evaluator(String),

    #[error("fixture error: {0}")]
    Fixture(String),

    #[error("trace error: {0}")]
    Trace(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
