//! Conditional diffusion refinement for single-image super-resolution.
//!
//! A small U-Net learns to predict the clean high-resolution image from a
//! noised latent and a condition image (a bicubic or externally
//! super-resolved upscale of the low-resolution input). Generation runs a
//! deterministic reverse process over an evenly spaced timestep
//! subsequence, so an output is a pure function of its inputs and seed.
//!
//! Module map:
//! - [`schedule`]: cosine noise schedule and inference subsequences
//! - [`image`]: rasters, PNG I/O, bicubic resampling, patches
//! - [`diffusion`]: forward noising, reverse steps, the sampler
//! - [`denoiser`]: the U-Net, its gradients, checkpoints
//! - [`training`]: Adam and the training loop
//! - [`conditioning`]: condition image sources and caching
//! - [`dataset`]: patch datasets and manifests
//! - [`metrics`]: PSNR, SSIM and evaluation reports
//! - [`commands`]: the operations behind the `diffsr` binary, with
//!   [`config`] snapshots of their effective settings
//! - [`rng`]: seeded ChaCha8 streams and normal draws
//! - [`synthetic`]: procedural test images

pub mod commands;
pub mod conditioning;
pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod image;
pub mod metrics;
pub mod rng;
pub mod schedule;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use image::{ImageTensor, Range};
pub use schedule::{NoiseSchedule, TimestepSubsequence};
