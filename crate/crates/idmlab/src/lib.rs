//! Desk-scale laboratory for truncation-robust inverse dynamics.
//!
//! The crate pairs a deterministic synthetic 2-D arm world with a small
//! trainable model that regresses joint-space actions from masked video
//! windows: pixel-and-pooling robot masks, a patch encoder, directional
//! feature aggregation, gated temporal fusion with a causal TCN residual,
//! and an evaluation harness that scores models on light/heavy truncation
//! splits.

pub mod action;
pub mod config;
pub mod dataset;
pub mod dfa;
pub mod encoder;
pub mod error;
pub mod evalbench;
pub mod image;
pub mod masking;
pub mod param;
pub mod pipeline;
pub mod synth;
pub mod tdr;
pub mod tensor;

pub use error::{Error, Result};
