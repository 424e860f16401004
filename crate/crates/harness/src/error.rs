use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] grip_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: bad checkpoint: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error("no evaluated run at {}", path.display())]
    MissingRun { path: PathBuf },
}

impl HarnessError {
    /// Short machine-readable category for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Core(grip_core::Error::Training { .. }) => "training",
            HarnessError::Core(_) => "core",
            HarnessError::Io { .. } => "io",
            HarnessError::Parse { .. } => "parse",
            HarnessError::Csv { .. } => "csv",
            HarnessError::Config(_) => "config",
            HarnessError::Checkpoint { .. } => "checkpoint",
            HarnessError::MissingRun { .. } => "missing_run",
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| HarnessError::Io { path: path.into(), source })
    }
}

impl<T> IoContext<T> for csv::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| HarnessError::Csv { path: path.into(), source })
    }
}
