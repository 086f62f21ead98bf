use thiserror::Error;

use crate::io::checkpoint::Checkpoint;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("checkpoint error at byte {offset}: {reason}")]
    Checkpoint { offset: u64, reason: String },

    #[error("image format error: {0}")]
    Image(String),

    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite loss. Carries the last state whose
    /// parameters were all finite.
    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged {
        epoch: usize,
        step: usize,
        last_finite: Box<Checkpoint>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
