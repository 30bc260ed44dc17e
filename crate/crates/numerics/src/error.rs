use thiserror::Error;

/// Errors raised by tensor construction, kernels, the gradient tape and IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("loss must be a scalar, got dims {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("loss does not depend on any parameter")]
    DetachedGraph,

    #[error("backward already ran on this graph; build a fresh graph or call reset_gradients")]
    BackwardTwice,

    #[error("precision mismatch: expected {expected}, found {found}")]
    PrecisionMismatch { expected: &'static str, found: &'static str },

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
