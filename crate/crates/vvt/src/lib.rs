//! Files, configuration, stage orchestration and the command line for the
//! `vvt-core` try-on pipeline.
//!
//! A run reads a TOML [`config::PipelineConfig`], writes every artifact
//! under its run directory and records them in a [`manifest::RunManifest`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod fixture;
pub mod fsio;
pub mod generation;
pub mod imageio;
pub mod latent_file;
pub mod manifest;
pub mod pipeline;
pub mod prep;
pub mod skeleton_file;

pub use error::{Result, VvtError};
