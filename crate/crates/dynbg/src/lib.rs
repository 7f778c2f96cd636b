//! Per-scene dynamic background subtraction.
//!
//! Given a fixed-camera video with dynamic background motion (water, foliage,
//! falling snow) and nothing more than frame-level "object-free" tags, this
//! crate trains two small networks per scene and then segments moving objects
//! online:
//!
//! * a fully connected autoencoder that memorises the static background and
//!   reconstructs it from each incoming frame ([`ae`]),
//! * a U-Net, deliberately overfitted to the scene, that marks which pixels
//!   currently show dynamic background texture ([`unet`]), trained on weak
//!   labels derived from the autoencoder residual ([`labels`]),
//! * an online inference pipeline that composes the foreground map, maintains
//!   a per-pixel flicker-entropy threshold, and emits clean binary masks
//!   ([`pipeline`]).
//!
//! Supporting modules: dataset loading in CDnet/I2R layouts ([`dataset`]),
//! CDnet-convention scoring and throughput benchmarking ([`eval`]), a
//! deterministic synthetic scene generator for end-to-end verification
//! ([`synth`]), and run configuration ([`config`]).
//!
//! [`ae`]: nn::ae
//! [`unet`]: nn::unet

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod labels;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
