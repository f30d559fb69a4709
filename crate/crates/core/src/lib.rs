//! Core algorithms for a two-stage video virtual try-on pipeline.
//!
//! Everything here is allocation-only (`no_std` + `alloc`): pose-driven
//! conditioning, keyframe sampling, a toy invertible latent codec, caption
//! handling, a small multi-stream diffusion transformer with LoRA adapters
//! and its own reverse-mode autodiff, rectified-flow training and sampling,
//! Laplacian-pyramid fusion and evaluation metrics.
//!
//! File formats, images on disk, configuration and the CLI live in the `vvt`
//! companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autograd;
pub mod caption;
pub mod codec;
pub mod dit;
pub mod error;
pub mod flow;
pub mod fusion;
pub mod keyframe;
pub mod math;
pub mod metrics;
pub mod pose;
pub mod raster;
pub mod rng;

pub use error::{Error, Result};

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
