use thiserror::Error;

/// Errors raised by the solvers and file readers.
#[derive(Debug, Error)]
pub enum CscError {
    /// Shapes or arguments that break an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An atom with zero norm cannot be used for coordinate updates.
    #[error("degenerate dictionary: atom {0} has zero norm")]
    DegenerateAtom(usize),

    /// NaN or infinite values in inputs or in an evaluated objective.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CscError>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(CscError::Contract(msg.into()))
}
