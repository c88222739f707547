use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("VRT1 format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, left: &[usize], right: &[usize]) -> Result<T> {
    Err(TensorError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    })
}

pub(crate) fn arg_err<T>(op: &'static str, msg: impl Into<String>) -> Result<T> {
    Err(TensorError::InvalidArgument {
        op,
        msg: msg.into(),
    })
}
