//! Reverse-mode automatic differentiation over dense 4-D tensors.
//!
//! The engine is deliberately small: a define-by-run [`Graph`] records every
//! operation in topological order, and [`Graph::backward`] sweeps it once in
//! reverse. Only the layers needed by convolutional image-to-image networks
//! are provided (convolution, transposed convolution, instance normalization,
//! reflection padding, pointwise activations and the L1/MSE losses).
//!
//! Everything is generic over [`Scalar`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks.

mod adam;
mod checkpoint;
mod conv;
mod error;
mod gradcheck;
mod graph;
pub mod init;
mod ops;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::{AutogradError, Result};
pub use gradcheck::{grad_check, numeric_gradients, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use scalar::Scalar;
pub use tensor::Tensor;
