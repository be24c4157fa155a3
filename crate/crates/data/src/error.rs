use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("truncated EDF: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("EDF header: {0}")]
    Header(String),
    #[error("degenerate calibration on signal {0:?}")]
    Calibration(String),
    #[error("hypnogram: {0}")]
    Hypnogram(String),
    #[error("montage: {0}")]
    Montage(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("split: {0}")]
    Split(String),
    #[error("synthesis: {0}")]
    Synth(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] somnet_core::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::Io { path, source }
}
