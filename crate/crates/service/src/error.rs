use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),

    #[error("{0}")]
    BadRequest(String),

    /// The request is well-formed but the workspace lacks a prerequisite.
    #[error("{0}")]
    Conflict(String),

    #[error("{0}")]
    Internal(String),
}

/// Machine-readable error body shared by the HTTP API and the CLI.
#[derive(Debug, Serialize)]
pub struct ErrorRecord<'a> {
    pub error: ErrorDetail<'a>,
}

#[derive(Debug, Serialize)]
pub struct ErrorDetail<'a> {
    pub kind: &'a str,
    pub message: String,
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn record(&self) -> ErrorRecord<'_> {
        ErrorRecord {
            error: ErrorDetail {
                kind: self.kind(),
                message: self.to_string(),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.record()).expect("error records serialise")
    }
}

impl From<topoexplain::Error> for ServiceError {
    fn from(e: topoexplain::Error) -> Self {
        use topoexplain::Error as E;
        match e {
            E::InvalidGraph(_)
            | E::InvalidMask(_)
            | E::Dimension(_)
            | E::InvalidTarget(_)
            | E::InvalidConfig(_)
            | E::Degenerate(_) => ServiceError::BadRequest(e.to_string()),
            E::NonFinite { .. } | E::Json(_) | E::Io(_) => ServiceError::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Internal(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        ServiceError::Internal(format!("json: {e}"))
    }
}
