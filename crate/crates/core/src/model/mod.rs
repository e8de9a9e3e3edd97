//! Hand-rolled convolutional network: NCHW tensors, layer primitives,
//! the densely connected architecture family, and checkpoint IO.
//!
//! Parameters and checkpoints live in f32; all arithmetic runs in f64 so
//! gradients check out against finite differences and checkpoint
//! round-trips are bit-exact.

pub mod checkpoint;
pub mod densenet;
pub mod layers;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, LoadReport, StateEntry};
pub use densenet::{DenseNet, DenseNetConfig, Gradients, ModelError, Stem};
pub use layers::Mode;
pub use tensor::Tensor4;
