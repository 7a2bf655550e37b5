use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum IclError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("data error at line {line}: {msg}")]
    DataLine { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IclError>;

impl IclError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        IclError::Shape {
            op,
            detail: detail.into(),
        }
    }
}
