//! Unsupervised change detection for multispectral raster tile pairs.
//!
//! The crate is organised as a pipeline:
//!
//! - [`raster`]: scene files, tiling and pre/post pairing.
//! - [`preprocess`]: major-axis spectral alignment and log + robust percentile scaling.
//! - [`nn`]: a small reverse-mode tape with the convolutional kernels and Adam.
//! - [`vae`]: the convolutional β-VAE, its loss, augmentation, training and checkpoints.
//! - [`changedet`]: per-tile anomaly scores (latent cosine, pixel cosine, CVA, IR-MAD).
//! - [`eval`]: precision–recall statistics, bootstrap intervals and paired tests.
//! - [`synth`]: seeded synthetic scene pairs with planted burn scars.
//!
//! Numerical kernels are generic over [`Scalar`] so the same code runs in a
//! 64-bit check mode (gradient checks, tests) and a 32-bit fast mode
//! (training and inference).

pub mod changedet;
pub mod error;
pub mod eval;
pub mod nn;
pub mod preprocess;
pub mod raster;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod vae;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// 32-bit tensor used for training and inference.
pub type Tensor32 = nn::Tensor<f32>;
/// 64-bit tensor used for gradient checks.
pub type Tensor64 = nn::Tensor<f64>;
/// Fast-mode model.
pub type Vae32 = vae::Vae<f32>;
/// Check-mode model.
pub type Vae64 = vae::Vae<f64>;
/// Fast-mode parameter store.
pub type Params32 = nn::Params<f32>;
/// Check-mode parameter store.
pub type Params64 = nn::Params<f64>;
