use std::fmt;

use serde::Serialize;

use crate::semantic::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Whether a failed backend call may succeed if issued again.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendFailure {
    Retriable,
    Permanent,
}

impl fmt::Display for BackendFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendFailure::Retriable => f.write_str("retriable"),
            BackendFailure::Permanent => f.write_str("permanent"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("validation failed: {}", describe(.0))]
    Validation(Vec<Violation>),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The completion text could not be turned into a semantic space.
    /// The raw text is kept so callers can surface it.
    #[error("completion parse failed: {message}")]
    Completion { message: String, raw_text: String },

    #[error("template error: {0}")]
    Template(String),

    #[error("{kind} backend error from {backend}: {message}")]
    Backend {
        backend: &'static str,
        kind: BackendFailure,
        message: String,
    },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn backend(backend: &'static str, kind: BackendFailure, msg: impl Into<String>) -> Self {
        Error::Backend {
            backend,
            kind,
            message: msg.into(),
        }
    }

    pub fn is_retriable(&self) -> bool {
        matches!(
            self,
            Error::Backend {
                kind: BackendFailure::Retriable,
                ..
            }
        )
    }
}

fn describe(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
