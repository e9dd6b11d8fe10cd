//! Activation compression for model-parallel transformer training.
//!
//! The crate is organised in five layers:
//!
//! * [`tensor`]: dense row-major tensors, a seeded generator, singular
//!   spectra and the binary tensor fixture format.
//! * [`compress`]: Top-K, Random-K, min-max quantization and linear
//!   autoencoder codecs, error feedback, and exact message-byte accounting.
//! * [`sim`]: functional simulation of tensor- and pipeline-parallel
//!   transformer execution with compression hooks, plus an event-driven
//!   fill-drain pipeline schedule.
//! * [`cost`]: the analytical per-layer and cluster throughput model and
//!   its coefficient fitting.
//! * [`harness`]: experiment configuration, presets, dispatch and reports.

pub mod compress;
pub mod cost;
mod error;
pub mod harness;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
