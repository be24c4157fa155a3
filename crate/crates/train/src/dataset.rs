//! Preprocessed, labeled recordings and the fixed-length sequences cut from
//! them.

use std::path::{Path, PathBuf};

use log::{debug, warn};
use somnet_core::dsp::{preprocess, PreprocessedRecording};
use somnet_core::objective::BroadcastLabels;
use somnet_core::{Hypnogram, Real, Tensor, EPOCH_SECONDS};
use somnet_data::{load_entry, parse_hypnogram, AccessLog, CohortManifest, ManifestEntry};

use crate::error::{io_err, Result, TrainError};

/// One recording ready for the network.
#[derive(Clone, Debug)]
pub struct PreparedRecording<T> {
    pub subject_id: String,
    pub cohort: String,
    pub edf: PathBuf,
    pub signals: PreprocessedRecording<T>,
    pub hypnogram: Hypnogram,
}

impl<T: Real> PreparedRecording<T> {
    pub fn epochs(&self) -> usize {
        self.hypnogram.len()
    }
}

/// Cache file of a manifest entry: the EDF path mirrored under `dir`.
pub fn cache_path(dir: &Path, entry: &ManifestEntry) -> PathBuf {
    let rel: PathBuf = entry.edf.components().filter(|c| matches!(c, std::path::Component::Normal(_))).collect();
    dir.join(rel).with_extension("snpp")
}

/// Read, condition and label `entry`. With a cache directory, conditioned
/// signals are reused when present and written otherwise; either way every
/// file read goes through `access`.
pub fn prepare_entry<T: Real>(
    manifest: &CohortManifest,
    entry: &ManifestEntry,
    access: &AccessLog,
    cache: Option<&Path>,
) -> Result<PreparedRecording<T>> {
    let cached = cache.map(|d| cache_path(d, entry));
    if let Some(path) = cached.as_ref().filter(|p| p.is_file()) {
        let signals = PreprocessedRecording::read_cache(&mut access.read(path)?.as_slice())?;
        let hyp_path = manifest.resolve(&entry.hypnogram);
        let mut hypnogram = parse_hypnogram(&access.read_to_string(&hyp_path)?, &manifest.stage_map)?;
        hypnogram.truncate(signals.epochs());
        if hypnogram.len() < signals.epochs() {
            return Err(TrainError::Config(format!("{}: annotation shorter than the cached signals", path.display())));
        }
        debug!("{}: from cache", entry.edf.display());
        return Ok(PreparedRecording {
            subject_id: entry.subject_id.clone(),
            cohort: entry.cohort.clone(),
            edf: entry.edf.clone(),
            signals,
            hypnogram,
        });
    }
    let labeled = load_entry(manifest, entry, access)?;
    let signals = preprocess::<T>(&labeled.recording)?;
    let mut hypnogram = labeled.hypnogram;
    hypnogram.truncate(signals.epochs());
    if let Some(path) = cached {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut buf = Vec::new();
        signals.write_cache(&mut buf)?;
        std::fs::write(&path, buf).map_err(io_err(&path))?;
    }
    Ok(PreparedRecording { subject_id: entry.subject_id.clone(), cohort: entry.cohort.clone(), edf: entry.edf.clone(), signals, hypnogram })
}

pub fn prepare_entries<T: Real>(
    manifest: &CohortManifest,
    entries: &[&ManifestEntry],
    access: &AccessLog,
    cache: Option<&Path>,
) -> Result<Vec<PreparedRecording<T>>> {
    entries.iter().map(|e| prepare_entry(manifest, e, access, cache)).collect()
}

/// Start epochs of the non-overlapping `alpha`-epoch windows of a recording;
/// a trailing partial window is dropped.
pub fn sequence_starts(epochs: usize, alpha: usize) -> Vec<usize> {
    if alpha == 0 {
        return Vec::new();
    }
    (0..epochs / alpha).map(|i| i * alpha).collect()
}

/// One model input with its broadcast targets.
#[derive(Clone, Debug)]
pub struct SequenceInput<T> {
    pub start_epoch: usize,
    /// `[4, alpha · 30 · fs]`
    pub data: Tensor<T>,
    pub labels: BroadcastLabels,
}

fn slice_signals<T: Real>(rec: &PreparedRecording<T>, start_epoch: usize, alpha: usize, out: &mut Vec<T>) {
    let per_epoch = EPOCH_SECONDS * rec.signals.fs as usize;
    let (lo, hi) = (start_epoch * per_epoch, (start_epoch + alpha) * per_epoch);
    for c in 0..rec.signals.data.shape()[0] {
        out.extend_from_slice(&rec.signals.channel(c)[lo..hi]);
    }
}

fn labels_for<T: Real>(rec: &PreparedRecording<T>, start_epoch: usize, alpha: usize, tau: usize) -> Result<BroadcastLabels> {
    let targets = rec.hypnogram.targets();
    Ok(BroadcastLabels::new(&targets[start_epoch..start_epoch + alpha], tau)?)
}

/// Every `alpha`-epoch sequence of `rec`, labels broadcast to `tau`-second
/// windows.
pub fn sample_sequences<T: Real>(rec: &PreparedRecording<T>, alpha: usize, tau: usize) -> Result<Vec<SequenceInput<T>>> {
    if rec.epochs() < alpha || alpha == 0 {
        return Err(TrainError::ShortRecording { subject: rec.subject_id.clone(), epochs: rec.epochs(), alpha });
    }
    sequence_starts(rec.epochs(), alpha)
        .into_iter()
        .map(|start| {
            let mut data = Vec::new();
            slice_signals(rec, start, alpha, &mut data);
            let n = data.len() / rec.signals.data.shape()[0];
            Ok(SequenceInput { start_epoch: start, data: Tensor::new([rec.signals.data.shape()[0], n], data)?, labels: labels_for(rec, start, alpha, tau)? })
        })
        .collect()
}

/// A sequence addressed by recording index and start epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SequenceRef {
    pub recording: usize,
    pub start_epoch: usize,
}

/// Sequences of a recording set in recording order. Recordings shorter than
/// `alpha` contribute nothing and are reported.
pub fn index_sequences<T: Real>(recs: &[PreparedRecording<T>], alpha: usize) -> Vec<SequenceRef> {
    let mut out = Vec::new();
    for (i, r) in recs.iter().enumerate() {
        if r.epochs() < alpha {
            warn!("{}: {} epochs, shorter than one sequence; skipped", r.edf.display(), r.epochs());
        }
        out.extend(sequence_starts(r.epochs(), alpha).into_iter().map(|s| SequenceRef { recording: i, start_epoch: s }));
    }
    out
}

/// Stack sequences into a `[B, 4, alpha · 30 · fs]` batch with their labels.
pub fn assemble_batch<T: Real>(
    recs: &[PreparedRecording<T>],
    refs: &[SequenceRef],
    alpha: usize,
    tau: usize,
) -> Result<(Tensor<T>, Vec<BroadcastLabels>)> {
    let first = refs.first().ok_or_else(|| TrainError::EmptyPartition("empty batch".into()))?;
    let c = recs[first.recording].signals.data.shape()[0];
    let n = alpha * EPOCH_SECONDS * recs[first.recording].signals.fs as usize;
    let mut data = Vec::with_capacity(refs.len() * c * n);
    let mut labels = Vec::with_capacity(refs.len());
    for r in refs {
        let rec = &recs[r.recording];
        slice_signals(rec, r.start_epoch, alpha, &mut data);
        labels.push(labels_for(rec, r.start_epoch, alpha, tau)?);
    }
    Ok((Tensor::new([refs.len(), c, n], data)?, labels))
}
