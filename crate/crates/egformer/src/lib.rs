//! Equirectangular geometry-biased window attention, from scratch.
//!
//! This crate implements the EGformer attention mechanism for 360° images:
//! equirectangular relative position embedding (ERPE), the distance-based
//! attention score (DAS) that replaces softmax, and equirectangular-aware
//! attention rearrangement (EaAR), assembled into horizontal/vertical
//! stripe-window transformer blocks and a toy encoder-decoder depth network.
//!
//! Everything runs on a small f64 tensor core with reverse-mode autodiff and
//! an instrumented multiply-accumulate counter, so every claim the mechanism
//! makes (bias antisymmetry, score range, complexity formulas, gradients) can
//! be checked against independent brute-force references in [`oracle`].

pub mod attention;
pub mod data;
pub mod error;
pub mod fsio;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod selfcheck;
pub mod tensor;

pub use error::{Error, Result};
