//! Training harness: sequence sampling, the training loop with
//! validation-based model selection, evaluation reports and the experiment
//! runners.

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod experiments;
pub mod report;
pub mod trainer;

pub use config::{RunConfig, Selection, FRACTIONS};
pub use dataset::{prepare_entries, prepare_entry, sample_sequences, PreparedRecording, SequenceInput};
pub use error::{Result, TrainError};
pub use evaluate::{evaluate, hypnodensity, Evaluation};
pub use experiments::{ExperimentConfig, Grid, SweepTable};
pub use report::MetricsReport;
pub use trainer::{argmax_pass, load_checkpoint, read_log, LogEvent, PassRecord, Sidecar, TrainOutcome, Trainer};
