use std::path::PathBuf;

use mvcsc::CscError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config values or input shapes. Exit code 2.
    #[error("{0}")]
    Usage(String),

    /// A solver produced a non-finite value. Exit code 3.
    #[error("numerical failure: {message}")]
    Numerical { message: String, diagnostics: Option<PathBuf> },

    /// Anything else, mostly I/O. Exit code 1.
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl From<CscError> for CliError {
    fn from(e: CscError) -> Self {
        match e {
            CscError::Config(_) | CscError::Contract(_) | CscError::Format(_) => CliError::Usage(e.to_string()),
            CscError::NonFinite(_) | CscError::DegenerateAtom(_) => CliError::Numerical {
                message: e.to_string(),
                diagnostics: None,
            },
            CscError::Io(io) => CliError::Other(io.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}
