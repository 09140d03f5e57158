//! Residual steps network laboratory.
//!
//! A from-scratch, allocation-only (`no_std` + `alloc`) implementation of the
//! residual steps block, the pose refine machine and the multi-stage pose
//! cascade, together with the pieces needed to study them at desk scale:
//!
//! * [`tensor`] and [`graph`]: dense NCHW tensors, differentiable primitives,
//!   reverse-mode autodiff and finite-difference checking.
//! * [`optim`]: Adam with L2 weight decay.
//! * [`arch`]: block and network builders plus the ablation variants.
//! * [`analysis`]: symbolic receptive-field propagation and parameter/MAC
//!   accounting.
//! * [`codec`]: Gaussian heatmap targets and test-time keypoint decoding.
//! * [`metrics`]: OKS average precision and PCKh.
//! * [`data`]: synthetic stick-figure generation and augmentation.
//! * [`train`]: the training loop with intermediate supervision.
//! * [`verify`]: the finite-difference gradient suite.
//!
//! File formats, IO and the command line live in the companion `rsn` crate.

#![no_std]

extern crate alloc;

pub mod analysis;
pub mod arch;
pub mod codec;
pub mod data;
mod error;
pub mod graph;
pub mod metrics;
pub mod optim;
pub mod rng;
mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::{Shape, Tensor};
