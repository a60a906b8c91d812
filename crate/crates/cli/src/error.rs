use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    ConfigFile { path: PathBuf, line: usize, msg: String },

    #[error(transparent)]
    Core(#[from] adaabc::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Some sweep children failed; the table was still written.
    #[error("{failed} of {total} sweep runs failed")]
    SweepFailures { failed: usize, total: usize, numeric: bool },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use adaabc::Error as E;
        match self {
            CliError::Config(_) | CliError::ConfigFile { .. } => 2,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(E::Config(_) | E::Parse { .. }) => 2,
            CliError::SweepFailures { numeric: true, .. } => 3,
            _ => 1,
        }
    }
}
