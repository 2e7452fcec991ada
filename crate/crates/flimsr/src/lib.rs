//! File formats, dataset layout, training orchestration and the `flimsr`
//! command line for multi-channel FLIM pixel super-resolution.
//!
//! The numerics live in `flimsr_core`; this crate adds everything that
//! touches the filesystem: the FLIMB image container, checkpoints, the
//! degraded-dataset layout, FFT spectra, and the end-to-end pipeline.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod flimb;
pub mod ops;
pub mod pipeline;
pub mod spectrum;

pub use error::{Error, Result};
