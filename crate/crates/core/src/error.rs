use std::path::PathBuf;
use thiserror::Error;
use vrdrive_tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid track: {0}")]
    InvalidTrack(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{path}: {msg}")]
    File { path: PathBuf, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

pub(crate) fn file_err(path: impl Into<PathBuf>, msg: impl std::fmt::Display) -> Error {
    Error::File {
        path: path.into(),
        msg: msg.to_string(),
    }
}
