//! Scalar-generic numeric core of the sleep-staging toolkit.

pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod recording;
pub mod scalar;
pub mod stage;
pub mod tensor;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, Summary};
pub use model::{ModelConfig, SleepNet};
pub use recording::{Channel, ChannelRole, PsgRecording};
pub use stage::{Hypnogram, Stage, EPOCH_SECONDS, NUM_STAGES};
pub use scalar::Real;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type SleepNet32 = SleepNet<f32>;
pub type SleepNet64 = SleepNet<f64>;
