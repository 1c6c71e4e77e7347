use std::io;
use std::path::Path;

use hibert_core::Error as CoreError;

/// Failures surfaced by the command line, mapped onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// 2 configuration, 3 data or checkpoint, 4 numeric failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(CoreError::Config(_)) => 2,
            CliError::Data(_)
            | CliError::Checkpoint(_)
            | CliError::Io { .. }
            | CliError::Core(CoreError::Input(_) | CoreError::Integrity(_) | CoreError::Lookup { .. }) => 3,
            CliError::Core(CoreError::NonFinite { .. }) => 4,
            CliError::Core(_) => 1,
        }
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub(crate) fn data_err(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}

pub(crate) fn checkpoint_err(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}
