//! File formats, dataset generation, training and evaluation around
//! [`nvas_core`].

pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod experiments;
pub mod pftb;
pub mod plot;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
