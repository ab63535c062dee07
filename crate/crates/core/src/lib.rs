//! Multi-coil MR image reconstruction with per-scan locally trained
//! unrolled networks.
//!
//! The crate covers the full desk-scale pipeline: the multi-coil forward
//! model and centered FFT, a small hand-differentiated residual CNN
//! denoiser, the unrolled denoiser + conjugate-gradient data-consistency
//! reconstructor and its training loop, nearest-neighbor search over a
//! training set, the alternating local-training reconstruction procedure,
//! synthetic clustered phantom generation, and image quality metrics.

pub mod adam;
pub mod cli;
pub mod denoiser;
pub mod error;
pub mod fft;
pub mod forward;
pub mod image;
pub mod io;
pub mod londn;
pub mod metrics;
pub mod neighbors;
pub mod phantom;
pub mod rng;
pub mod unroll;

pub use error::{Error, Result};
