use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dtype mismatch: {0}")]
    DType(String),
    #[error("division by zero in elementwise div")]
    DivisionByZero,
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss must be real-valued")]
    NotReal,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown name `{0}`")]
    UnknownName(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("required output `{0}` is unreachable from the network inputs")]
    DeadOutput(String),
    #[error("all paths of block {0} were pruned")]
    EmptyBlock(usize),
    #[error("no architecture satisfies the parameter constraints; best infeasible trial #{trial_id} has {param_count} parameters")]
    Infeasible { trial_id: usize, param_count: usize },
    #[error("data error in {path}: {reason}")]
    Data { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn dtype(msg: impl Into<String>) -> Self {
        Error::DType(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn data(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
