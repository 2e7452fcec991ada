//! Numerical core for multi-channel fluorescence lifetime (FLIM) pixel
//! super-resolution.
//!
//! Everything in this crate is pure computation over in-memory buffers and
//! builds under `#![no_std]` with `alloc`. File formats, FFT-based spectra
//! and the command-line front end live in the `flimsr` crate.
//!
//! Module map:
//!
//! - [`image`], [`dataset`], [`phantom`]: the six-channel data model,
//!   patient-wise splits and synthetic tissue phantoms.
//! - [`degrade`], [`resample`]: block-average degradation, percentile
//!   clipping, min-max normalization, patch tiling and bilinear resizing.
//! - [`nn`], [`networks`]: a small CPU tensor/layer toolkit with hand-written
//!   backward passes, and the U-Net generator / strided discriminator.
//! - [`gan`]: adversarial least-squares objectives, Huber pixel loss, the
//!   alternating training loop and tiled inference.
//! - [`bbdm`]: Brownian-bridge diffusion baseline.
//! - [`metrics`], [`spectrum`], [`stats`]: MSE/PSNR/SSIM, radial spectrum
//!   binning and the paired t-test.
//!
//! Enable the `std` feature to let the GEMM kernels detect SIMD support at
//! runtime and use worker threads.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod bbdm;
pub mod dataset;
pub mod degrade;
mod error;
pub mod gan;
pub mod image;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod phantom;
pub mod resample;
pub mod rng;
pub mod spectrum;
pub mod stats;

pub use error::{Error, Result};
pub use image::{Channel, ChannelKind, FlimImage};
