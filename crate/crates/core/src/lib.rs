//! Dynamic convolution toolkit.
//!
//! Five convolutional variants (static, global channel attention, local
//! kernel attention with a recurrent kernel representation, hard kernel
//! gating and orientation-pooled convolution) built from primitives with
//! hand-written vector-Jacobian products, plus the training engine, metrics
//! and dataset plumbing needed to benchmark them.

pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Prng, Tensor};
