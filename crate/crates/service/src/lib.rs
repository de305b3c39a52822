//! Workspace persistence, HTTP API and CLI plumbing around the
//! `topoexplain` engine.

pub mod engine;
pub mod error;
pub mod http;
pub mod workspace;

pub use engine::Engine;
pub use error::{Result, ServiceError};
pub use workspace::{Family, Workspace};
