use std::path::PathBuf;

use hybridsim::{FlowError, SystemError};

/// Process exit codes.
pub const EXIT_IO: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ConfigRead { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {source}")]
    Config { path: PathBuf, source: SystemError },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] hybridsim::Error),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::ConfigRead { .. } | CliError::Config { .. } | CliError::Usage(_) => EXIT_USAGE,
            CliError::Write { .. } => EXIT_IO,
            CliError::Run(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Run(hybridsim::Error::Io(_)) => EXIT_IO,
            CliError::Run(_) => EXIT_USAGE,
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        CliError::Run(e.into())
    }
}
