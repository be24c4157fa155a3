//! Whole-recording inference and agreement scoring.

use std::collections::BTreeMap;

use somnet_core::dsp::PreprocessedRecording;
use somnet_core::metrics::{aggregate_subject_metrics, argmax_columns, Summary};
use somnet_core::objective::time_average_predictions;
use somnet_core::{ConfusionMatrix, Hypnogram, Real, SleepNet, Tensor, EPOCH_SECONDS};

use crate::dataset::PreparedRecording;
use crate::error::{Result, TrainError};

/// Per-second stage probabilities `[K, seconds]` of a whole recording.
///
/// The recording is cut into non-overlapping `alpha`-epoch sequences; when
/// the epoch count is not a multiple of `alpha`, one extra sequence aligned
/// to the end supplies the remaining seconds.
pub fn hypnodensity<T: Real>(net: &SleepNet<T>, signals: &PreprocessedRecording<T>, batch: usize) -> Result<Tensor<T>> {
    let cfg = net.config;
    let epochs = signals.epochs();
    if epochs < cfg.alpha {
        return Err(TrainError::ShortRecording { subject: String::new(), epochs, alpha: cfg.alpha });
    }
    if signals.fs as usize != cfg.fs || signals.data.shape()[0] != cfg.channels {
        return Err(TrainError::Config(format!(
            "recording has {} channels at {} Hz, model expects {} at {}",
            signals.data.shape()[0],
            signals.fs,
            cfg.channels,
            cfg.fs
        )));
    }
    let mut starts: Vec<usize> = (0..epochs / cfg.alpha).map(|i| i * cfg.alpha).collect();
    if epochs % cfg.alpha != 0 {
        starts.push(epochs - cfg.alpha);
    }
    let (k, seconds) = (cfg.classes, epochs * EPOCH_SECONDS);
    let per_seq = cfg.alpha * EPOCH_SECONDS;
    let n = cfg.samples_per_sequence();
    let per_epoch = EPOCH_SECONDS * cfg.fs;
    let mut out = vec![T::zero(); k * seconds];
    for chunk in starts.chunks(batch.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * cfg.channels * n);
        for &s in chunk {
            for c in 0..cfg.channels {
                data.extend_from_slice(&signals.channel(c)[s * per_epoch..s * per_epoch + n]);
            }
        }
        let y = net.predict(&Tensor::new([chunk.len(), cfg.channels, n], data)?)?;
        let cols = y.shape()[2];
        for (b, &s) in chunk.iter().enumerate() {
            let one = Tensor::new([k, cols], y.data()[b * k * cols..(b + 1) * k * cols].to_vec())?;
            let sec = time_average_predictions(&one, cfg.columns_per_second())?;
            let offset = s * EPOCH_SECONDS;
            for c in 0..k {
                // the end-aligned sequence overwrites the seconds it shares with the last full one
                for t in 0..per_seq {
                    out[c * seconds + offset + t] = sec.data()[c * per_seq + t];
                }
            }
        }
    }
    Ok(Tensor::new([k, seconds], out)?)
}

/// Window-level (reference, prediction) streams of a recording for an
/// averaging window of `window` seconds.
pub fn window_streams<T: Real>(density: &Tensor<T>, hypnogram: &Hypnogram, window: usize) -> Result<(Vec<Option<usize>>, Vec<usize>)> {
    if window == 0 || EPOCH_SECONDS % window != 0 {
        return Err(TrainError::Config(format!("window {window} s does not divide {EPOCH_SECONDS} s")));
    }
    let seconds = hypnogram.len() * EPOCH_SECONDS;
    if density.ndim() != 2 || density.shape()[1] != seconds {
        return Err(TrainError::Config(format!("{:?} probabilities for {} epochs", density.shape(), hypnogram.len())));
    }
    let predicted = argmax_columns(&time_average_predictions(density, window)?);
    let per = EPOCH_SECONDS / window;
    let reference = hypnogram.targets().into_iter().flat_map(|t| std::iter::repeat_n(t, per)).collect();
    Ok((reference, predicted))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectScore {
    pub subject_id: String,
    pub cohort: String,
    pub confusion: ConfusionMatrix,
}

impl SubjectScore {
    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy().unwrap_or(f64::NAN)
    }

    pub fn kappa(&self) -> f64 {
        self.confusion.cohen_kappa().unwrap_or(f64::NAN)
    }
}

/// Per-subject and pooled agreement at one window length.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub window_seconds: usize,
    /// Sorted by subject id; subjects without scored windows are left out.
    pub subjects: Vec<SubjectScore>,
    pub pooled: ConfusionMatrix,
}

impl Evaluation {
    pub fn accuracies(&self) -> Vec<f64> {
        self.subjects.iter().map(SubjectScore::accuracy).collect()
    }

    pub fn kappas(&self) -> Vec<f64> {
        self.subjects.iter().map(SubjectScore::kappa).collect()
    }

    /// Mean per-subject accuracy.
    pub fn mean_accuracy(&self) -> f64 {
        mean(&self.accuracies())
    }

    pub fn mean_kappa(&self) -> f64 {
        mean(&self.kappas())
    }

    pub fn pooled_accuracy(&self) -> f64 {
        self.pooled.accuracy().unwrap_or(f64::NAN)
    }

    pub fn pooled_kappa(&self) -> f64 {
        self.pooled.cohen_kappa().unwrap_or(f64::NAN)
    }

    /// Accuracy and kappa summaries; needs at least two subjects.
    pub fn summaries(&self) -> Option<(Summary, Summary)> {
        Some((aggregate_subject_metrics(&self.accuracies()).ok()?, aggregate_subject_metrics(&self.kappas()).ok()?))
    }

    /// The subset of subjects from `cohort`, with its own pooled matrix.
    pub fn restrict(&self, cohort: &str) -> Evaluation {
        let subjects: Vec<SubjectScore> = self.subjects.iter().filter(|s| s.cohort == cohort).cloned().collect();
        let mut pooled = ConfusionMatrix::new(self.pooled.classes());
        for s in &subjects {
            pooled.merge(&s.confusion).expect("same class count");
        }
        Evaluation { window_seconds: self.window_seconds, subjects, pooled }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Score precomputed densities against their recordings. Recordings of the
/// same subject are pooled into one row.
pub fn score<T: Real>(densities: &[Tensor<T>], recs: &[PreparedRecording<T>], window: usize, classes: usize) -> Result<Evaluation> {
    let mut by_subject: BTreeMap<String, SubjectScore> = BTreeMap::new();
    let mut pooled = ConfusionMatrix::new(classes);
    for (d, r) in densities.iter().zip(recs) {
        let (reference, predicted) = window_streams(d, &r.hypnogram, window)?;
        let cm = ConfusionMatrix::from_streams(classes, &reference, &predicted)?;
        pooled.merge(&cm)?;
        by_subject
            .entry(r.subject_id.clone())
            .or_insert_with(|| SubjectScore { subject_id: r.subject_id.clone(), cohort: r.cohort.clone(), confusion: ConfusionMatrix::new(classes) })
            .confusion
            .merge(&cm)?;
    }
    let subjects = by_subject.into_values().filter(|s| s.confusion.total() > 0).collect();
    Ok(Evaluation { window_seconds: window, subjects, pooled })
}

pub fn densities<T: Real>(net: &SleepNet<T>, recs: &[PreparedRecording<T>], batch: usize) -> Result<Vec<Tensor<T>>> {
    recs.iter()
        .map(|r| {
            hypnodensity(net, &r.signals, batch).map_err(|e| match e {
                TrainError::ShortRecording { epochs, alpha, .. } => TrainError::ShortRecording { subject: r.subject_id.clone(), epochs, alpha },
                e => e,
            })
        })
        .collect()
}

pub fn evaluate<T: Real>(net: &SleepNet<T>, recs: &[PreparedRecording<T>], window: usize, batch: usize) -> Result<Evaluation> {
    score(&densities(net, recs, batch)?, recs, window, net.config.classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use somnet_core::Stage;

    #[test]
    fn window_streams_average_then_argmax() {
        // 1 epoch, second 0..15 favour N2, 15..30 favour W more weakly
        let density = Tensor::from_fn([5, 30], |i| {
            let (c, t) = (i / 30, i % 30);
            match (c, t < 15) {
                (2, true) => 0.9,
                (0, false) => 0.6,
                (_, true) => 0.025,
                _ => 0.1,
            }
        });
        let hyp = Hypnogram::new(vec![Stage::N2]);
        let (r, p) = window_streams(&density, &hyp, 30).unwrap();
        assert_eq!((r, p), (vec![Some(2)], vec![2]));
        let (r, p) = window_streams(&density, &hyp, 15).unwrap();
        assert_eq!(r, vec![Some(2); 2]);
        assert_eq!(p, vec![2, 0]);
        assert!(window_streams(&density, &hyp, 7).is_err());
    }
}
