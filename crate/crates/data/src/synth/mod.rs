//! Synthetic multi-site cohorts with stage-dependent spectra, written as
//! standard EDF plus annotation files.

mod chain;
mod cohort;
mod profile;
mod signal;

pub use chain::{generate_hypnogram, generate_hypnogram_with};
pub use cohort::{derive_seed, generate_cohorts, synthesize, CohortSpec, SynthSpec, MANIFEST_FILE, SPEC_FILE};
pub use profile::{ScorerBias, SignatureTable, SiteProfile, StageSignature, TransitionMatrix, Vocabulary, EEG_BANDS};
pub use signal::{generate_recording, SyntheticRecording};
