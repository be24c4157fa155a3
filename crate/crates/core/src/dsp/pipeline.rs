use std::io::{Read, Write};

use crate::dsp::butterworth::{eeg_bandpass, emg_highpass, FilterSpec};
use crate::dsp::filtfilt::zero_phase_filter;
use crate::dsp::resample::resample_polyphase;
use crate::error::{Error, Result};
use crate::recording::{ChannelRole, PsgRecording};
use crate::scalar::Real;
use crate::stage::EPOCH_SECONDS;
use crate::tensor::Tensor;

/// Model input sampling rate.
pub const TARGET_FS: u32 = 128;

/// Lower bound on the divisor in [`zscore_normalize`].
pub const NORM_EPS: f64 = 1e-8;

pub const CACHE_MAGIC: &[u8; 4] = b"SNPP";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation, two-pass.
pub fn moments<T: Real>(x: &[T]) -> NormStats {
    if x.is_empty() {
        return NormStats { mean: 0.0, std: 0.0 };
    }
    let n = x.len() as f64;
    // shifted by the first sample, so constant input gives an exact mean
    let shift = x[0].as_f64();
    let mean = shift + x.iter().map(|v| v.as_f64() - shift).sum::<f64>() / n;
    let var = x.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    NormStats { mean, std: var.sqrt() }
}

/// `(x − mean) / max(std, eps)`; returns the statistics used.
pub fn zscore_normalize<T: Real>(x: &[T], eps: f64) -> (Vec<T>, NormStats) {
    let stats = moments(x);
    let denom = stats.std.max(eps);
    (x.iter().map(|v| T::lit((v.as_f64() - stats.mean) / denom)).collect(), stats)
}

/// Four conditioned channels at [`TARGET_FS`], row-major `[4, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedRecording<T> {
    pub data: Tensor<T>,
    pub fs: u32,
    /// Pre-normalization statistics per channel; empty when loaded from cache.
    pub stats: Vec<NormStats>,
}

impl<T: Real> PreprocessedRecording<T> {
    pub fn samples(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.samples();
        &self.data.data()[c * n..(c + 1) * n]
    }

    pub fn epochs(&self) -> usize {
        self.samples() / (EPOCH_SECONDS * self.fs as usize)
    }

    /// Cache layout: magic, `u64` sample count N, `u32` fs, then `4 × N`
    /// little-endian `f32` values, channel-major.
    pub fn write_cache(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(self.samples() as u64).to_le_bytes())?;
        w.write_all(&self.fs.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.numel() * 4);
        for v in self.data.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        Ok(w.write_all(&buf)?)
    }

    pub fn read_cache(r: &mut impl Read) -> Result<Self> {
        let mut head = [0u8; 16];
        r.read_exact(&mut head).map_err(|e| Error::Format(format!("cache header: {e}")))?;
        if &head[..4] != CACHE_MAGIC {
            return Err(Error::Format("not a preprocessed-recording cache".into()));
        }
        let n = u64::from_le_bytes(head[4..12].try_into().unwrap()) as usize;
        let fs = u32::from_le_bytes(head[12..16].try_into().unwrap());
        let mut buf = vec![0u8; 4 * n * 4];
        r.read_exact(&mut buf).map_err(|e| Error::Format(format!("cache payload: {e}")))?;
        let data = buf
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        Ok(Self { data: Tensor::new([4, n], data)?, fs, stats: Vec::new() })
    }
}

fn conditioning_filter(role: ChannelRole) -> Result<FilterSpec> {
    match role {
        ChannelRole::Emg => emg_highpass(TARGET_FS as f64),
        _ => eeg_bandpass(TARGET_FS as f64),
    }
}

/// Resample every channel to 128 Hz, filter it (EEG/EOG band-pass, EMG
/// high-pass), drop samples past the last whole epoch, then z-normalize.
pub fn preprocess<T: Real>(rec: &PsgRecording) -> Result<PreprocessedRecording<T>> {
    let mut filtered = Vec::with_capacity(4);
    for ch in rec.channels() {
        let x = resample_polyphase(&ch.samples, ch.sample_rate, TARGET_FS)?;
        filtered.push(zero_phase_filter(&x, &conditioning_filter(ch.role)?)?);
    }
    let per_epoch = EPOCH_SECONDS * TARGET_FS as usize;
    let shortest = filtered.iter().map(Vec::len).min().unwrap_or(0);
    let n = shortest / per_epoch * per_epoch;
    if n == 0 {
        return Err(Error::SignalTooShort { needed: per_epoch, got: shortest });
    }
    let mut data = Vec::with_capacity(4 * n);
    let mut stats = Vec::with_capacity(4);
    for x in &filtered {
        let (z, s) = zscore_normalize::<T>(&x[..n].iter().map(|&v| T::lit(v)).collect::<Vec<_>>(), NORM_EPS);
        data.extend(z);
        stats.push(s);
    }
    Ok(PreprocessedRecording { data: Tensor::new([4, n], data)?, fs: TARGET_FS, stats })
}
