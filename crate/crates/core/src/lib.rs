//! Hybrid real- and complex-valued neural networks.
//!
//! The crate provides dense real/complex tensors with split-real reverse-mode
//! autodiff, 1-D convolutional layers for both domains, real↔complex domain
//! conversions, a generalized family of complex activations, the four-path
//! hybrid block with dependency pruning, a phased architecture search, audio
//! and synthetic data pipelines, and weight-forensics tooling.

pub mod activations;
pub mod analysis;
pub mod autograd;
pub mod conversion;
pub mod datasets;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod nas;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Param, ParamId, Session, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{DType, Tensor, C64};
