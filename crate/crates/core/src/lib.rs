//! Multi-scale class-similarity analysis of CNN representations and
//! ResNets with scale-transformed attention condenser (STAC) gates.
//!
//! - [`tensor`], [`ops`], [`autodiff`]: dense tensors, kernels and
//!   reverse-mode differentiation.
//! - [`nn`]: ResNet builder with STAC / squeeze-and-excitation attention.
//! - [`analysis`]: per-layer, per-scale kNN class similarity.
//! - [`costmodel`]: static FLOPs and parameter counts.
//! - [`train`]: SGD with warmup + cosine schedule.
//! - [`data`]: datasets, feature dumps, checkpoints and report files.

pub mod analysis;
pub mod autodiff;
pub mod costmodel;
pub mod data;
pub mod error;
pub mod nn;
pub mod ops;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
