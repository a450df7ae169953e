//! Fully automatic grayscale image colorization.
//!
//! The pipeline converts images to CIELAB, trains a small convolutional
//! network to predict the ab chroma planes from the L channel alone, and
//! colorizes by merging predicted chroma back with the original lightness.

// Numeric kernels index several parallel buffers with one loop counter;
// iterator rewrites obscure that.
#![allow(clippy::needless_range_loop)]

pub mod colorspace;
pub mod error;
pub mod eval;
pub mod imageops;
pub mod model;
pub mod nn;
pub mod quantizer;
pub mod trainer;

pub use error::{Error, Result};
