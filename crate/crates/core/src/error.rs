use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("model checksum mismatch: bitstream {expected:016x}, loaded model {actual:016x}")]
    ChecksumMismatch { expected: u64, actual: u64 },

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 is a data problem (unreadable or mismatched inputs), 3 an internal
    /// failure. Usage errors (1) are produced by argument parsing itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(_)
            | Error::ChecksumMismatch { .. }
            | Error::CorruptStream(_)
            | Error::Io { .. }
            | Error::Image(_)
            | Error::Csv(_) => 2,
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::Shape(_) | Error::Domain(_) | Error::NonFinite(_) | Error::Diverged { .. } => 3,
        }
    }
}
