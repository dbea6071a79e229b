//! Library error type.

use thiserror::Error;

/// Errors across the library surface.
#[derive(Debug, Error)]
pub enum NpnError {
    /// Input outside a function's mathematical domain.
    #[error("domain error in {what}: {detail}")]
    Domain { what: &'static str, detail: String },

    /// Incompatible matrix shapes.
    #[error("shape mismatch in {what}: {detail}")]
    Shape { what: &'static str, detail: String },

    /// Invalid network or training configuration.
    #[error("invalid config: {0}")]
    Config(String),

    /// Malformed input data (IDX, bag-of-words, CSV).
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    /// Checkpoint file failed validation.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A numerical routine failed to converge.
    #[error("{what} did not converge: requested {requested:e}, achieved {achieved:e}")]
    NoConverge {
        what: &'static str,
        requested: f64,
        achieved: f64,
    },

    /// Non-finite value produced where a finite one is required.
    #[error("non-finite value in {what}: {detail}")]
    NonFinite { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl NpnError {
    pub fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        NpnError::Domain {
            what,
            detail: detail.into(),
        }
    }

    pub fn shape(what: &'static str, detail: impl Into<String>) -> Self {
        NpnError::Shape {
            what,
            detail: detail.into(),
        }
    }

    pub fn parse(path: impl Into<String>, detail: impl Into<String>) -> Self {
        NpnError::Parse {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, NpnError>;
