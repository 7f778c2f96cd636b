//! Weak-label preparation: turn the trained static-background autoencoder
//! plus object-free frames into binary dynamic-background masks for U-Net
//! training. A pixel is labelled dynamic when the reconstruction residual
//! exceeds a threshold — no human annotation anywhere.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ae::{generate_background, Autoencoder};
use crate::types::{save_mask_png, BinaryMask, ImageTensor, ScalarMap};

/// How `|I - B|` is reduced across color channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelReduce {
    /// Motion visible in any channel counts (default).
    #[default]
    Max,
    /// Average across channels; less sensitive, kept for comparison.
    Mean,
}

/// Label-preparation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelPrepConfig {
    /// Residual threshold in (0, 1); strictly-greater pixels become labels.
    pub theta_label: f32,
    pub channel_reduce: ChannelReduce,
}

impl Default for LabelPrepConfig {
    fn default() -> Self {
        LabelPrepConfig {
            theta_label: 0.1,
            channel_reduce: ChannelReduce::Max,
        }
    }
}

impl LabelPrepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_label > 0.0 && self.theta_label < 1.0) {
            return Err(Error::Config {
                reason: format!(
                    "theta_label must lie in (0, 1), got {}",
                    self.theta_label
                ),
            });
        }
        Ok(())
    }
}

/// Per-pixel channel-reduced absolute difference between two frames; values
/// stay in `[0, 1]` because both inputs do.
pub fn residual(i: &ImageTensor, b: &ImageTensor, reduce: ChannelReduce) -> Result<ScalarMap> {
    if i.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            context: "residual".into(),
            expected: vec![i.dim().0, i.dim().1, i.dim().2],
            got: vec![b.dim().0, b.dim().1, b.dim().2],
        });
    }
    let (h, w, c) = i.dim();
    let mut out = ScalarMap::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for ch in 0..c {
                let d = (i[(y, x, ch)] - b[(y, x, ch)]).abs();
                match reduce {
                    ChannelReduce::Max => acc = acc.max(d),
                    ChannelReduce::Mean => acc += d,
                }
            }
            out[(y, x)] = match reduce {
                ChannelReduce::Max => acc,
                ChannelReduce::Mean => acc / c as f32,
            };
        }
    }
    Ok(out)
}

/// Thresholds a residual map with a strict `>` (ties are background).
pub fn threshold_residual(r: &ScalarMap, theta: f32) -> BinaryMask {
    r.mapv(|v| v > theta)
}

/// Runs every object-free frame through the autoencoder and thresholds the
/// reconstruction residual into a binary dynamic-background label mask.
/// One mask per frame, same order; bit-reproducible from (model, frames,
/// config).
pub fn make_dynamic_labels(
    frames: &[ImageTensor],
    model: &mut Autoencoder<f32>,
    config: &LabelPrepConfig,
) -> Result<Vec<BinaryMask>> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::Config {
            reason: "label preparation needs at least one frame".into(),
        });
    }
    let mut masks = Vec::with_capacity(frames.len());
    for frame in frames {
        let background = generate_background(model, frame)?;
        let r = residual(frame, &background, config.channel_reduce)?;
        masks.push(threshold_residual(&r, config.theta_label));
    }
    Ok(masks)
}

pub use crate::dataset::label_file_name;

/// Persists label masks as 8-bit {0,255} PNGs named `dbg%06d.png` (1-based).
pub fn save_labels(dir: &Path, masks: &[BinaryMask]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.to_path_buf(), e))?;
    for (i, mask) in masks.iter().enumerate() {
        save_mask_png(&dir.join(label_file_name(i + 1)), mask)?;
    }
    Ok(())
}
