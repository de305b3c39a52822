use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
