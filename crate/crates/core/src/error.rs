use std::io;

use thiserror::Error;

pub type Result<T, E = FlicError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FlicError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed bytes in a weight file, container or image file.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("model mismatch: container was encoded with model {expected}, loaded model is {found}")]
    ModelMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FlicError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FlicError::InvalidArgument(msg.into())
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        FlicError::Format {
            offset,
            message: msg.into(),
        }
    }
}
