use std::io;
use std::path::PathBuf;

use dopplerkit_core::Error as CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("bad config: {0}")]
    Config(String),
    #[error("missing input {}: {reason}", path.display())]
    MissingInput { path: PathBuf, reason: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Core(CoreError),
    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput { .. } => 3,
            CliError::Numerical(_) => 4,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Spec(_) | CoreError::Parse(_) => 2,
                CoreError::Numerical(_) => 4,
                _ => 1,
            },
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            CliError::MissingInput {
                path,
                reason: source.to_string(),
            }
        } else {
            CliError::Io { path, source }
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Numerical(m) => CliError::Numerical(m),
            other => CliError::Core(other),
        }
    }
}
