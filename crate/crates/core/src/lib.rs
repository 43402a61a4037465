//! Learned image compression toolkit.
//!
//! Building blocks, bottom up:
//!
//! - [`tensor`]: dense tensors with a reverse-mode autodiff tape, convolutions, GDN and Adam.
//! - [`entropy`]: factorized entropy bottleneck, Gaussian conditional, quantization
//!   and quantized CDF tables.
//! - [`range_coder`]: static-table range coder with an escape path for out-of-support values.
//! - [`models`]: factorized, scale-hyperprior and mean-scale-hyperprior codecs with real
//!   `compress`/`decompress` and the `.nzb` container.
//! - [`training`]: rate-distortion losses, the lambda table, LR plateau schedule,
//!   patch sampling, checkpoints and the training loop.
//! - [`metrics`]: MSE, PSNR, MS-SSIM and bits per pixel.
//! - [`benchmark`]: dataset evaluation of learned models and external codecs,
//!   quality search, aggregation and JSON/CSV/SVG reports.
//! - [`cli`]: the `nzc` command line front end.
//!
//! See the crate's `examples/` directory for one runnable program per capability.

pub mod benchmark;
pub mod cli;
pub mod entropy;
pub mod error;
pub mod image_io;
pub mod synthetic;
pub mod metrics;
pub mod models;
pub mod range_coder;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
