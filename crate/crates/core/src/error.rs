use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("inconsistent data: {0}")]
    Data(String),

    #[error("non-finite value during {stage} (step {step})")]
    NonFinite { stage: &'static str, step: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss (max |H| = {max_logit:e})")]
    Divergence { epoch: usize, max_logit: f64 },

    #[error("cholesky factorization failed at pivot {pivot} (value {value:e}, diagonal ratio estimate {condition:e})")]
    Factorization { pivot: usize, value: f64, condition: f64 },

    #[error("{n} rows exceed the dense cap of {cap}")]
    TooLarge { n: usize, cap: usize },

    #[error("model file rejected: {0}")]
    Model(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure category, used by the CLI for its exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::NonFinite { .. } | Error::Divergence { .. } | Error::Factorization { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
