//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Precondition violation on an operation input.
    #[error("domain error: {0}")]
    Domain(String),

    /// A file could not be parsed; carries file and line for reporting.
    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },

    /// Scenario or model configuration rejected during validation.
    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    /// A skim lookup had no entry for the requested cell.
    #[error("missing skim entry: mode {mode}, zones {origin}->{destination}")]
    MissingSkim {
        mode: String,
        origin: u64,
        destination: u64,
    },

    /// Two tables that must share a shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Model fitting could not proceed or converge.
    #[error("fit error: {0}")]
    Fit(String),

    /// Exponent of the production model left the representable range.
    #[error("exponent overflow: exponent {exponent} saturated to {saturated}")]
    ExponentOverflow { exponent: f64, saturated: f64 },

    /// Internal consistency failure (signals a bug, not bad input).
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn invalid_config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: msg.into(),
        }
    }

    /// True for errors that indicate rejected input rather than a runtime
    /// failure; the CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. } | Error::Parse { .. } | Error::Domain(_)
        )
    }
}
