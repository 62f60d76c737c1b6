//! Differentiable multi-resolution hash-grid features addressed by
//! continuous key codes.
//!
//! The crate trains a small convolutional encoder to emit per-image key
//! codes in [0,1], looks those keys up (together with normalized spatial
//! coordinates) in multi-resolution hash tables, and decodes the gathered
//! features back into images. All numeric code is generic over [`Scalar`];
//! f32 is the working precision and f64 exists to verify gradients.

pub mod analysis;
pub mod error;
pub mod grid;
pub mod img;
pub mod keys;
pub mod nn;
pub mod scalar;
pub mod snapshot;
pub mod trainer;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default working precision.
pub type Real = f32;
/// Precision used by gradient verification.
pub type Wide = f64;

pub type GridGroup32 = grid::HashTableGroup<f32>;
pub type GridGroup64 = grid::HashTableGroup<f64>;
