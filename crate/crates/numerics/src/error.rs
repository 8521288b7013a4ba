use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch { node: usize, op: &'static str, detail: String },
    #[error("non-finite output at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("node {0} has not been evaluated in this graph")]
    NotEvaluated(usize),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("gradients are disabled for this graph")]
    GradDisabled,
    #[error("finite-difference step must be positive, got {0}")]
    InvalidEps(f64),
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("OWTR format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NumericsError>;
