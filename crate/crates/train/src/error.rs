use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("run configuration: {0}")]
    Config(String),
    #[error("empty partition: {0}")]
    EmptyPartition(String),
    #[error("recording {subject} has {epochs} epochs, fewer than the sequence length {alpha}")]
    ShortRecording { subject: String, epochs: usize, alpha: usize },
    #[error("cohort {cohort} has {have} training recordings, {need} requested")]
    InsufficientPsgs { cohort: String, need: usize, have: usize },
    #[error("non-finite {what} at pass {pass}, step {step}{}", dump.as_ref().map(|p| format!("; state written to {}", p.display())).unwrap_or_default())]
    Diverged { what: &'static str, pass: usize, step: usize, dump: Option<PathBuf> },
    #[error("training opened {} file(s) outside its partition, first {}", .0.len(), .0[0].display())]
    Audit(Vec<PathBuf>),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Data(#[from] somnet_data::DataError),
    #[error(transparent)]
    Core(#[from] somnet_core::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> TrainError {
    let path = path.into();
    move |source| TrainError::Io { path, source }
}
