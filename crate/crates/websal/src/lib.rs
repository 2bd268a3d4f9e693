//! Two-stage adversarial saliency prediction for webpage screenshots.
//!
//! A coarse generator proposes a saliency map from the screenshot, a fine
//! generator refines it with the coarse map as a fourth input channel, and
//! a discriminator pushes both toward the statistics of real attention
//! data. Laplacian-of-Gaussian outline maps of the page are injected into
//! the decoders as a rendering-structure prior.
//!
//! The pieces are usable on their own: [`tensor`] is a small dense 4-D
//! autodiff engine, [`imageops`] covers outline extraction and fixation
//! handling, [`data`] loads eye-tracking datasets and synthesizes toy
//! pages, and [`trainer`] ties everything into a deterministic,
//! resumable training loop. See the `examples/` directory for one
//! runnable program per capability.

pub mod cli;
pub mod data;
pub mod imageops;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod rng;
pub mod trainer;
pub mod tensor;

pub use tensor::{Mode, Shape, Tensor, TensorError};

/// Command-line entry point; returns the process exit code.
pub fn run() -> i32 {
    cli::cli(std::env::args_os())
}
