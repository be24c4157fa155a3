//! Agreement metrics: confusion counts, accuracy, Cohen's kappa and the
//! per-subject aggregation used in reports.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Two-sided normal quantile for a 95% interval.
pub const Z_95: f64 = 1.96;

/// `counts[i][j]`: epochs with reference class `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument("confusion matrix must be square and non-empty".into()));
        }
        Ok(Self { counts })
    }

    /// Count paired labels; pairs whose reference is `None` are skipped.
    pub fn from_streams(classes: usize, reference: &[Option<usize>], predicted: &[usize]) -> Result<Self> {
        if reference.len() != predicted.len() {
            return Err(Error::InvalidArgument(format!(
                "{} references for {} predictions",
                reference.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(classes);
        for (r, &p) in reference.iter().zip(predicted) {
            if let Some(r) = *r {
                cm.record(r, p)?;
            }
        }
        Ok(cm)
    }

    pub fn record(&mut self, reference: usize, predicted: usize) -> Result<()> {
        let k = self.classes();
        if reference >= k || predicted >= k {
            return Err(Error::InvalidArgument(format!("label outside 0..{k}")));
        }
        self.counts[reference][predicted] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::InvalidArgument("class counts differ".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    fn nonempty_total(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::InvalidArgument("empty confusion matrix".into())),
            t => Ok(t as f64),
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        Ok(self.trace() as f64 / self.nonempty_total()?)
    }

    /// Chance-corrected agreement. A matrix whose expected agreement is 1
    /// (a single class used by both raters) has kappa 0.
    pub fn cohen_kappa(&self) -> Result<f64> {
        let n = self.nonempty_total()?;
        let k = self.classes();
        let po = self.trace() as f64 / n;
        let pe = (0..k)
            .map(|i| {
                let row: u64 = self.counts[i].iter().sum();
                let col: u64 = self.counts.iter().map(|r| r[i]).sum();
                row as f64 * col as f64
            })
            .sum::<f64>()
            / (n * n);
        if (1.0 - pe).abs() < f64::EPSILON {
            warn!("kappa undefined for single-class agreement; reporting 0");
            return Ok(0.0);
        }
        Ok((po - pe) / (1.0 - pe))
    }
}

/// Mean, sample SD, median and normal 95% interval of per-subject values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Summary {
    /// Interval from already-aggregated statistics.
    pub fn from_moments(n: usize, mean: f64, sd: f64, median: f64) -> Self {
        let half = Z_95 * sd / (n as f64).sqrt();
        Self { n, mean, sd, median, ci_low: mean - half, ci_high: mean + half }
    }
}

pub fn aggregate_subject_metrics(values: &[f64]) -> Result<Summary> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 subjects, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
    Ok(Summary::from_moments(n, mean, sd, median))
}

/// Index of the largest entry of every column of `[K, N]`; ties go to the
/// lower class.
pub fn argmax_columns<T: Real>(y: &Tensor<T>) -> Vec<usize> {
    let (k, n) = (y.shape()[0], y.shape()[1]);
    let d = y.data();
    (0..n)
        .map(|j| (1..k).fold(0, |best, i| if d[i * n + j] > d[best * n + j] { i } else { best }))
        .collect()
}

/// Mean correctness at every within-sequence second. `probs[s]` is the
/// `[K, α·30]` per-second output of sequence `s`, `refs[s]` its `α` epoch
/// labels. Predictions are averaged over `window` seconds before the argmax;
/// each second inherits the verdict of its window. Positions with no scored
/// reference across all sequences are NaN.
pub fn sequence_position_accuracy<T: Real>(
    probs: &[Tensor<T>],
    refs: &[Vec<Option<usize>>],
    epoch_seconds: usize,
    window: usize,
) -> Result<Vec<f64>> {
    if probs.is_empty() || probs.len() != refs.len() {
        return Err(Error::InvalidArgument("no complete sequences".into()));
    }
    if window == 0 || epoch_seconds % window != 0 {
        return Err(Error::InvalidArgument(format!("window {window} s does not divide {epoch_seconds} s")));
    }
    let width = refs[0].len() * epoch_seconds;
    let mut hits = vec![0u64; width];
    let mut seen = vec![0u64; width];
    for (p, r) in probs.iter().zip(refs) {
        if p.ndim() != 2 || p.shape()[1] != width || r.len() * epoch_seconds != width {
            return Err(Error::InvalidArgument("sequences differ in length".into()));
        }
        let (k, n) = (p.shape()[0], width);
        let d = p.data();
        for w in 0..n / window {
            let cls = (0..k)
                .map(|c| (c, (0..window).map(|s| d[c * n + w * window + s].as_f64()).sum::<f64>()))
                .fold((0, f64::MIN), |best, cur| if cur.1 > best.1 { cur } else { best })
                .0;
            for s in w * window..(w + 1) * window {
                if let Some(target) = r[s / epoch_seconds] {
                    seen[s] += 1;
                    hits[s] += (cls == target) as u64;
                }
            }
        }
    }
    Ok(hits.iter().zip(&seen).map(|(&h, &s)| if s == 0 { f64::NAN } else { h as f64 / s as f64 }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_cases() {
        let ones = ConfusionMatrix::from_counts(vec![vec![1, 1], vec![1, 1]]).unwrap();
        assert_eq!(ones.accuracy().unwrap(), 0.5);
        assert_eq!(ones.cohen_kappa().unwrap(), 0.0);
        let diag = ConfusionMatrix::from_counts(vec![vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 1]]).unwrap();
        assert_eq!(diag.accuracy().unwrap(), 1.0);
        assert_eq!(diag.cohen_kappa().unwrap(), 1.0);
    }

    #[test]
    fn single_class_kappa_is_zero() {
        let cm = ConfusionMatrix::from_counts(vec![vec![7, 0], vec![0, 0]]).unwrap();
        assert_eq!(cm.cohen_kappa().unwrap(), 0.0);
        assert!(ConfusionMatrix::new(5).accuracy().is_err());
    }

    #[test]
    fn table_intervals() {
        let s = Summary::from_moments(426, 0.779, 0.083, 0.8);
        assert_eq!(format!("{:.3}-{:.3}", s.ci_low, s.ci_high), "0.771-0.787");
        let s = Summary::from_moments(426, 0.645, 0.126, 0.7);
        assert_eq!(format!("{:.3}-{:.3}", s.ci_low, s.ci_high), "0.633-0.657");
    }

    #[test]
    fn aggregate_basics() {
        let s = aggregate_subject_metrics(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!((s.sd, s.ci_low, s.ci_high, s.median), (0.0, 0.5, 0.5, 0.5));
        let s = aggregate_subject_metrics(&[1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert!((s.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(aggregate_subject_metrics(&[1.0]).is_err());
    }

    #[test]
    fn position_profile_constructed_case() {
        // one epoch per sequence, reference class 1; first second predicts class 0
        let mut d = vec![0.0f64; 2 * 30];
        for s in 0..30 {
            let c = if s == 0 { 0 } else { 1 };
            d[c * 30 + s] = 1.0;
        }
        let p = Tensor::new([2, 30], d).unwrap();
        let prof = sequence_position_accuracy(&[p.clone(), p.clone()], &[vec![Some(1)], vec![Some(1)]], 30, 1).unwrap();
        assert_eq!(prof[0], 0.0);
        assert!(prof[1..].iter().all(|&v| v == 1.0));
        let prof = sequence_position_accuracy(&[p], &[vec![Some(1)]], 30, 30).unwrap();
        assert!(prof.iter().all(|&v| v == 1.0));
    }
}
