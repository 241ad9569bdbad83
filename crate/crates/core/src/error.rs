use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("value outside input domain: {0}")]
    Domain(String),
    #[error("landmark schema: {0}")]
    Schema(String),
    #[error("empty region: {0}")]
    EmptyRegion(String),
    #[error("invalid crop spec: {0}")]
    Spec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("image side {side} too small for {scales} MS-SSIM scales (needs {needed})")]
    Scale { side: usize, scales: usize, needed: usize },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("dataset quality: {0}")]
    DatasetQuality(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: {record}")]
    Diverged { step: u64, record: String },
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn manifest(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Manifest {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
