//! Metrics report JSON and the position-accuracy CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};
use somnet_core::metrics::{sequence_position_accuracy, Summary};
use somnet_core::{Real, Tensor, EPOCH_SECONDS};

use crate::dataset::PreparedRecording;
use crate::error::{io_err, Result};
use crate::evaluate::Evaluation;

pub const REPORT_FORMAT: &str = "somnet.metrics/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub subject_id: String,
    pub cohort: String,
    pub windows: u64,
    pub accuracy: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: Summary,
    pub kappa: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pooled {
    pub accuracy: f64,
    pub kappa: f64,
}

/// Agreement at one window length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowBlock {
    pub window_seconds: usize,
    pub subjects: Vec<SubjectRow>,
    /// Absent with fewer than two subjects.
    pub aggregate: Option<Aggregate>,
    pub pooled: Pooled,
    pub confusion: Vec<Vec<u64>>,
}

impl From<&Evaluation> for WindowBlock {
    fn from(e: &Evaluation) -> Self {
        WindowBlock {
            window_seconds: e.window_seconds,
            subjects: e
                .subjects
                .iter()
                .map(|s| SubjectRow {
                    subject_id: s.subject_id.clone(),
                    cohort: s.cohort.clone(),
                    windows: s.confusion.total(),
                    accuracy: s.accuracy(),
                    kappa: s.kappa(),
                })
                .collect(),
            aggregate: e.summaries().map(|(accuracy, kappa)| Aggregate { accuracy, kappa }),
            pooled: Pooled { accuracy: e.pooled_accuracy(), kappa: e.pooled_kappa() },
            confusion: e.pooled.counts().to_vec(),
        }
    }
}

/// The report: 30-s units first, optional extra window lengths after.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format: String,
    pub label: String,
    pub primary: WindowBlock,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub secondary: Vec<WindowBlock>,
}

impl MetricsReport {
    pub fn new(label: impl Into<String>, primary: &Evaluation, secondary: &[Evaluation]) -> Self {
        Self {
            format: REPORT_FORMAT.into(),
            label: label.into(),
            primary: primary.into(),
            secondary: secondary.iter().map(WindowBlock::from).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path).map_err(io_err(path))?)?)
    }
}

/// Accuracy per within-sequence second over every complete `alpha`-epoch
/// sequence of the recordings, for 1-s and 30-s windows.
pub fn position_profile<T: Real>(densities: &[Tensor<T>], recs: &[PreparedRecording<T>], alpha: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let width = alpha * EPOCH_SECONDS;
    let (mut probs, mut refs) = (Vec::new(), Vec::new());
    for (d, r) in densities.iter().zip(recs) {
        let (k, secs) = (d.shape()[0], d.shape()[1]);
        let targets = r.hypnogram.targets();
        for s in 0..r.epochs() / alpha {
            let lo = s * width;
            let seq: Vec<T> = (0..k).flat_map(|c| d.data()[c * secs + lo..c * secs + lo + width].iter().copied()).collect();
            probs.push(Tensor::new([k, width], seq)?);
            refs.push(targets[s * alpha..(s + 1) * alpha].to_vec());
        }
    }
    let one = sequence_position_accuracy(&probs, &refs, EPOCH_SECONDS, 1)?;
    let thirty = sequence_position_accuracy(&probs, &refs, EPOCH_SECONDS, EPOCH_SECONDS)?;
    Ok((one, thirty))
}

pub fn write_position_csv(path: &Path, one: &[f64], thirty: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["position_s", "accuracy_1s", "accuracy_30s"])?;
    for (i, (a, b)) in one.iter().zip(thirty).enumerate() {
        w.write_record([(i + 1).to_string(), a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}
