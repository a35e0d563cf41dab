use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("unknown sample id `{0}`")]
    UnknownId(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    NonFinite(String),

    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category, used as the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "argument",
            Error::Format(_) => "format",
            Error::Truncated(_) => "truncated",
            Error::Data(_) | Error::DuplicateId(_) | Error::UnknownId(_) => "data",
            Error::Split(_) => "split",
            Error::Sampling(_) => "sampling",
            Error::Config(_) => "config",
            Error::NonFinite(_) => "numeric",
            Error::Image { .. } => "image",
            Error::Io(_) => "io",
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(format!($($arg)*))
    };
}
pub(crate) use shape_err;
