//! Signal conditioning: resampling, zero-phase Butterworth filtering and
//! per-channel normalization.

pub mod butterworth;
pub mod filtfilt;
pub mod pipeline;
pub mod resample;

pub use butterworth::{design_butterworth, eeg_bandpass, emg_highpass, Biquad, FilterKind, FilterSpec};
pub use filtfilt::{pad_length, zero_phase_filter};
pub use pipeline::{
    moments, preprocess, zscore_normalize, NormStats, PreprocessedRecording, NORM_EPS, TARGET_FS,
};
pub use resample::{resample_polyphase, Resampler};
