use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum SxlError {
    /// A precondition on an operation's inputs was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A grid or checkpoint file failed to parse; `offset` is the byte
    /// position at which the problem was detected.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Numerical failure during training or solving (NaN loss, singular
    /// kriging system, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, SxlError>;

impl SxlError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        SxlError::InvalidArgument(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        SxlError::Format {
            offset,
            msg: msg.into(),
        }
    }
}
