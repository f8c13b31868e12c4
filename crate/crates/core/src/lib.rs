//! Segmentation of hierarchically nested classes with a single-channel
//! multi-level activation.
//!
//! The crate bundles everything needed to train and compare such models on
//! synthetic data: a small reverse-mode autodiff engine ([`tensor`]), the
//! activation and its pseudo-probability mappings ([`activation`]), the
//! compatible losses ([`losses`]), a U-Net style network ([`net`]), a nested
//! scene generator ([`synth`]), inference and statistics ([`metrics`],
//! [`wilcoxon`]) and the experiment harness ([`config`], [`harness`]).

pub mod activation;
pub mod config;
mod error;
pub mod harness;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod pgm;
pub mod synth;
pub mod tensor;
pub mod wilcoxon;

pub use error::{Error, Result};
pub use labels::LabelMap;
