use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// One offending row or field in an input file.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaViolation {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("series diverges: {0}")]
    Divergence(String),

    #[error(
        "sample interval {dt:e} s too coarse for model bandwidth {omega_max:e} rad/s \
         (need dt <= {limit:e} s)"
    )]
    Aliasing { dt: f64, omega_max: f64, limit: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("power-law tail model rejected: R^2 = {r_squared:.4} below threshold {threshold}")]
    TailModelRejected { r_squared: f64, threshold: f64 },

    #[error("frequency grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {} schema violation(s):\n{}", violations.len(), format_violations(violations))]
    Schema {
        path: PathBuf,
        violations: Vec<SchemaViolation>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_violations(v: &[SchemaViolation]) -> String {
    v.iter()
        .map(|x| format!("  {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
