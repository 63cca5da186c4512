use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an API contract (wrong shapes, non-scalar loss, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data is malformed or out of range.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("config error: {field}: {reason}")]
    Config { field: String, reason: String },

    /// Not enough qualifying words/sentences to build the requested corpus index.
    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),

    #[error("episode sampling failed: {0}")]
    Sampling(String),

    /// A collective was issued while a rank was still inside its inner loop.
    #[error("phase violation: {0}")]
    PhaseViolation(String),

    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    /// All-zero spectrum handed to the effective-rank formula.
    #[error("effective rank undefined for an all-zero spectrum")]
    ZeroSpectrum,

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record: {0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
