use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular butterfly factor: pair {pair} has zero determinant")]
    SingularFactor { pair: usize },

    #[error("non-finite loss in layer {layer}")]
    NonFiniteLoss { layer: String },

    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training aborted: {0}")]
    TrainingAborted(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
