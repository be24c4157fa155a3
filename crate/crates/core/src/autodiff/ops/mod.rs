//! Differentiable operations, one `impl Tape` block per family.

pub mod basic;
pub mod batchnorm;
pub mod conv;
pub mod gru;
pub mod loss;
pub mod nonlinear;
pub mod pool;
