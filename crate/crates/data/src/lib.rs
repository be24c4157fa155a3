//! Recording ingest (EDF, annotations, montages, manifests, subject splits)
//! and synthetic cohort generation.

pub mod access;
pub mod edf;
pub mod error;
pub mod hypnogram;
pub mod ingest;
pub mod manifest;
pub mod montage;
pub mod split;
pub mod synth;

pub use access::AccessLog;
pub use edf::{parse_edf, read_edf, write_edf, EdfFile, EdfHeader, Signal, SignalSpec};
pub use error::{DataError, Result};
pub use hypnogram::{load_hypnogram, parse_hypnogram, StageMap};
pub use ingest::{load_entry, LabeledRecording};
pub use manifest::{CohortManifest, ManifestEntry};
pub use montage::{apply_reference, assemble_recording, select_central_eeg, Lead, Montage};
pub use split::{split_cohort, split_sizes, Split};
