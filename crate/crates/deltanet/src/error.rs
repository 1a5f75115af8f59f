//! Error type shared by every module in the crate.

use thiserror::Error;

/// Errors produced by kernel, layer, and training code.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions do not satisfy the operation's contract.
    #[error("{op}: shape mismatch: {details}")]
    Shape { op: &'static str, details: String },

    /// Inputs are outside the mathematical domain of the operation.
    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// A computation produced or consumed a NaN/Inf where finite values are required.
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },

    /// A generated instance cannot fit the requested structure.
    #[error("capacity: {0}")]
    Capacity(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: usize },

    /// A configuration file or struct has an invalid field.
    #[error("config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    /// Malformed textual data (CSV, JSON lines).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape {
            op,
            details: details.into(),
        }
    }

    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            op,
            msg: msg.into(),
        }
    }
}
