//! Parameters, initialization, optimization and persistence.

pub mod adam;
pub mod checkpoint;
pub mod init;
pub mod params;

pub use adam::{Adam, AdamConfig};
pub use init::glorot_uniform;
pub use params::{Binding, ParamId, ParamKind, ParamStore, Parameter};
pub use checkpoint::CheckpointData;
