use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("choice {choice:?} is not an option of {attribute:?}")]
    Taxonomy { attribute: String, choice: String },
    #[error("missing attribute {0:?}")]
    MissingAttribute(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("expected {expected} frames, got {got}")]
    FrameCount { expected: String, got: usize },
    #[error("shape: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("annotation adapter: {0}")]
    Adapter(String),
    #[error("image encoding: {0}")]
    Image(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("non-finite {0} loss")]
    NonFiniteLoss(String),
    #[error("empty dataset: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
