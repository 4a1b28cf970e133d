use thiserror::Error;

/// Errors produced by the library. The CLI maps these onto exit codes, so
/// keep the variants coarse: invalid inputs, I/O, low SNR, numerical failure.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value or shape violates an operation's contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    /// Not enough late-time signal to estimate the absorption coefficient.
    #[error("insufficient SNR for absorption estimation: {0}")]
    InsufficientSnr(String),

    /// A solver or evaluation produced non-finite values or failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
