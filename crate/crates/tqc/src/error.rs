use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("parameter layout mismatch")]
    LayoutMismatch,

    #[error("trace already consumed by a previous backward pass")]
    TraceConsumed,

    #[error("non-finite value at parameter index {index}")]
    NonFinite { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot sample from an empty buffer")]
    EmptyBuffer,

    #[error("environment stepped after termination without reset")]
    SteppedAfterDone,

    #[error("non-finite loss at step {step}: {what}")]
    NumericFailure { step: u64, what: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
