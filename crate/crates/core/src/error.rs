//! Crate-wide error type.
//!
//! Library code never panics on bad input; everything user-facing funnels
//! through [`Error`] so the CLI can map validation problems and runtime
//! failures to distinct exit codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A line of an input file failed to parse. `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Structurally valid input that violates a documented constraint
    /// (out-of-range field, unknown id, malformed framework, bad K, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A configuration value is out of range or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// An LLM provider call failed after the allowed retry.
    #[error("provider error: {0}")]
    Provider(String),

    /// A provider returned an empty completion where text was required.
    #[error("provider returned an empty response")]
    EmptyResponse,

    /// Two vectors that must share a dimension do not.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// Training produced a non-finite loss; inputs or learning rate are bad.
    #[error("non-finite loss at {0}")]
    NonFiniteLoss(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Convenience for the common "field X out of range" validation case.
    pub fn field(field: &str, detail: impl std::fmt::Display) -> Self {
        Error::Validation(format!("{field}: {detail}"))
    }
}
