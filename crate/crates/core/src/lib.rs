//! Numerical core for physics-aware novel-view binaural synthesis.
//!
//! Everything in this crate is a pure function over in-memory data: the
//! time-frequency kernels, the image-source room oracle and its surrogate
//! renders, a small dense-network kernel with manual backpropagation, the
//! feature encoders and fusion adapter, the mask-based binaural generator,
//! and the evaluation metrics. File formats, dataset generation and the CLI
//! live in the `nvas` companion crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dsp;
pub mod encoders;
mod error;
pub mod fft;
pub mod generator;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod room;

pub use error::{Error, Result};
pub use num_complex::Complex64;
