//! Deterministic synthetic dynamic-background scenes: a smooth gradient
//! plate, a rectangular region of temporally oscillating stripes (plus
//! per-pixel noise), and — in test frames only — a moving square object.
//! Ground truth for both the object and the dynamic texture comes straight
//! from the generator's own math, so every end-to-end claim can be scored
//! exactly.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{cdnet_frame_name, cdnet_gt_name};
use crate::error::{Error, Result};
use crate::types::{save_image_jpeg, save_mask_png, BinaryMask, ImageTensor};

/// Axis-aligned rectangle, `(y, x)` top-left inclusive, `h x w` extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y && y < self.y + self.h && x >= self.x && x < self.x + self.w
    }
}

/// Complete description of one synthetic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSceneSpec {
    /// Frame size `(height, width)`.
    pub size: (usize, usize),
    /// Object-free frames (training split).
    pub n_train: usize,
    /// Frames containing the moving object (test split).
    pub n_test: usize,
    /// Region carrying the oscillating stripe texture.
    pub dynamic_region: Rect,
    /// Spatial stripe period in pixels.
    pub stripe_period: f32,
    /// Stripe brightness amplitude; the per-pixel residual the texture
    /// induces, so it must comfortably exceed the label threshold.
    pub stripe_amplitude: f32,
    /// Stripe phase advance per frame, radians.
    pub stripe_speed: f32,
    /// Per-pixel uniform noise amplitude inside the dynamic region.
    pub sigma_d: f32,
    /// Moving object: square side in pixels.
    pub object_side: usize,
    /// Object RGB color, normalised.
    pub object_color: [f32; 3],
    /// Object top-left position at the first test frame.
    pub object_start: (f32, f32),
    /// Object per-frame velocity `(dy, dx)` in pixels.
    pub object_velocity: (f32, f32),
    /// Global sensor noise amplitude (uniform, all pixels, all frames).
    pub sigma_g: f32,
    pub seed: u64,
}

/// The default scene: stripes strong enough that most of the region's
/// pixels exceed the label threshold in every frame (amplitude 0.45 puts
/// ~86% of stripe pixels above 0.1 per frame), and an object path across
/// the static plate. Overlapping paths are fully supported (set
/// `object_start`/`object_velocity` accordingly); the default keeps the
/// two regions disjoint so that end-to-end scores measure texture
/// memorization rather than the geometry of one chosen crossing.
impl Default for SynthSceneSpec {
    fn default() -> Self {
        SynthSceneSpec {
            size: (64, 64),
            n_train: 120,
            n_test: 60,
            dynamic_region: Rect { y: 8, x: 36, h: 24, w: 24 },
            stripe_period: 8.0,
            stripe_amplitude: 0.45,
            stripe_speed: 0.7,
            sigma_d: 0.02,
            object_side: 8,
            object_color: [0.95, 0.05, 0.05],
            object_start: (40.0, 2.0),
            object_velocity: (0.05, 0.9),
            sigma_g: 0.005,
            seed: 7,
        }
    }
}

impl SynthSceneSpec {
    pub fn n_total(&self) -> usize {
        self.n_train + self.n_test
    }

    /// Integer top-left corner of the object in test frame `k` (0-based).
    pub fn object_position(&self, k: usize) -> (i64, i64) {
        let y = self.object_start.0 + k as f32 * self.object_velocity.0;
        let x = self.object_start.1 + k as f32 * self.object_velocity.1;
        (y.round() as i64, x.round() as i64)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.size;
        let fail = |reason: String| Err(Error::Config { reason });
        if h == 0 || w == 0 {
            return fail(format!("scene size ({h}, {w}) must be positive"));
        }
        if self.n_train < 2 {
            return fail("need at least 2 training frames".into());
        }
        if self.n_test == 0 {
            return fail("need at least 1 test frame".into());
        }
        let r = &self.dynamic_region;
        if r.h == 0 || r.w == 0 || r.y + r.h > h || r.x + r.w > w {
            return fail(format!(
                "dynamic region {r:?} does not fit inside a {h}x{w} frame"
            ));
        }
        if !(self.stripe_period > 0.0) || !self.stripe_amplitude.is_finite() {
            return fail("stripe period must be positive and amplitude finite".into());
        }
        if self.sigma_d < 0.0 || self.sigma_g < 0.0 {
            return fail("noise amplitudes must be non-negative".into());
        }
        if self.object_side == 0 {
            return fail("object side must be positive".into());
        }
        for k in 0..self.n_test {
            let (y, x) = self.object_position(k);
            let s = self.object_side as i64;
            if y < 0 || x < 0 || y + s > h as i64 || x + s > w as i64 {
                return fail(format!(
                    "object trajectory leaves the frame at test frame {} \
                     (top-left ({y}, {x}), side {s}, frame {h}x{w})",
                    k + 1
                ));
            }
        }
        Ok(())
    }
}

/// Everything `generate_scene` produces. `gt_dynamic_masks` and `tags` cover
/// all frames in order (training split first); `gt_object_masks` cover the
/// test split only, aligned with `test_frames`.
#[derive(Clone, Debug)]
pub struct SynthScene {
    pub train_frames: Vec<ImageTensor>,
    pub test_frames: Vec<ImageTensor>,
    pub gt_object_masks: Vec<BinaryMask>,
    pub gt_dynamic_masks: Vec<BinaryMask>,
    /// `false` = object-free training frame, `true` = test frame.
    pub tags: Vec<bool>,
}

/// Smooth gradient plate, constant over time, with a flat mid-gray patch
/// under the dynamic region so the stripe oscillation never clips.
fn plate_value(spec: &SynthSceneSpec, y: usize, x: usize, c: usize) -> f32 {
    if spec.dynamic_region.contains(y, x) {
        return 0.5;
    }
    let (h, w) = spec.size;
    let fy = y as f32 / h.max(1) as f32;
    let fx = x as f32 / w.max(1) as f32;
    match c {
        0 => 0.35 + 0.30 * fx,
        1 => 0.45 + 0.25 * fy,
        _ => 0.55 - 0.20 * fx,
    }
}

/// The pure stripe term for frame `t` (0-based over the whole scene):
/// diagonal sinusoidal stripes whose phase advances `stripe_speed` per frame.
fn stripe_value(spec: &SynthSceneSpec, y: usize, x: usize, t: usize) -> f32 {
    let phase = 2.0 * std::f32::consts::PI * (y + x) as f32 / spec.stripe_period
        + t as f32 * spec.stripe_speed;
    spec.stripe_amplitude * phase.sin()
}

/// Generates the scene. Deterministic: the same spec (seed included) yields
/// byte-identical frames and masks.
pub fn generate_scene(spec: &SynthSceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let (h, w) = spec.size;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let n_total = spec.n_total();

    let mut train_frames = Vec::with_capacity(spec.n_train);
    let mut test_frames = Vec::with_capacity(spec.n_test);
    let mut gt_object_masks = Vec::with_capacity(spec.n_test);
    let mut tags = Vec::with_capacity(n_total);

    for t in 0..n_total {
        let is_test = t >= spec.n_train;
        let mut frame = Array3::zeros((h, w, 3));
        for y in 0..h {
            for x in 0..w {
                let in_dyn = spec.dynamic_region.contains(y, x);
                let texture = if in_dyn {
                    stripe_value(spec, y, x, t)
                        + if spec.sigma_d > 0.0 {
                            rng.gen_range(-spec.sigma_d..=spec.sigma_d)
                        } else {
                            0.0
                        }
                } else {
                    0.0
                };
                for c in 0..3 {
                    let sensor = if spec.sigma_g > 0.0 {
                        rng.gen_range(-spec.sigma_g..=spec.sigma_g)
                    } else {
                        0.0
                    };
                    frame[(y, x, c)] =
                        (plate_value(spec, y, x, c) + texture + sensor).clamp(0.0, 1.0);
                }
            }
        }
        if is_test {
            let k = t - spec.n_train;
            let (oy, ox) = spec.object_position(k);
            let mut mask = Array2::default((h, w));
            for dy in 0..spec.object_side {
                for dx in 0..spec.object_side {
                    let (y, x) = (oy as usize + dy, ox as usize + dx);
                    mask[(y, x)] = true;
                    for c in 0..3 {
                        frame[(y, x, c)] = spec.object_color[c].clamp(0.0, 1.0);
                    }
                }
            }
            gt_object_masks.push(mask);
            test_frames.push(frame);
        } else {
            train_frames.push(frame);
        }
        tags.push(is_test);
    }

    let dynamic = dynamic_mask(spec);
    let gt_dynamic_masks = vec![dynamic; n_total];

    Ok(SynthScene {
        train_frames,
        test_frames,
        gt_object_masks,
        gt_dynamic_masks,
        tags,
    })
}

/// Exact dynamic-texture ground truth: a pixel is dynamic when the
/// texture-driven temporal variation of its value — half the stripe term's
/// min-to-max swing over all generated frames, plus the per-pixel noise
/// amplitude — exceeds the sensor noise amplitude.
pub fn dynamic_mask(spec: &SynthSceneSpec) -> BinaryMask {
    let (h, w) = spec.size;
    Array2::from_shape_fn((h, w), |(y, x)| {
        if !spec.dynamic_region.contains(y, x) {
            return false;
        }
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for t in 0..spec.n_total() {
            let v = stripe_value(spec, y, x, t);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let variation = 0.5 * (hi - lo) + spec.sigma_d;
        variation > spec.sigma_g
    })
}

/// Ratio of mean pixelwise temporal standard deviation inside `region` to
/// that outside it. The generator's self-check requires >= 3 under the
/// default spec.
pub fn temporal_std_ratio(frames: &[ImageTensor], region: &BinaryMask) -> Result<f64> {
    let first = frames.first().ok_or_else(|| Error::Config {
        reason: "temporal std ratio needs at least one frame".into(),
    })?;
    let (h, w, c) = first.dim();
    if region.dim() != (h, w) {
        return Err(Error::ShapeMismatch {
            context: "temporal_std_ratio region".into(),
            expected: vec![h, w],
            got: vec![region.dim().0, region.dim().1],
        });
    }
    let n = frames.len() as f64;
    let mut sums = (0.0f64, 0usize, 0.0f64, 0usize); // (inside sum, count, outside sum, count)
    for y in 0..h {
        for x in 0..w {
            let mut std_acc = 0.0f64;
            for ch in 0..c {
                let mean =
                    frames.iter().map(|f| f64::from(f[(y, x, ch)])).sum::<f64>() / n;
                let var = frames
                    .iter()
                    .map(|f| (f64::from(f[(y, x, ch)]) - mean).powi(2))
                    .sum::<f64>()
                    / n;
                std_acc += var.sqrt();
            }
            let std = std_acc / c as f64;
            if region[(y, x)] {
                sums.0 += std;
                sums.1 += 1;
            } else {
                sums.2 += std;
                sums.3 += 1;
            }
        }
    }
    if sums.1 == 0 || sums.3 == 0 {
        return Err(Error::Config {
            reason: "region must contain both inside and outside pixels".into(),
        });
    }
    let inside = sums.0 / sums.1 as f64;
    let outside = (sums.2 / sums.3 as f64).max(1e-12);
    Ok(inside / outside)
}

/// JPEG quality for exported frames; high enough that compression error
/// stays far below the residual thresholds downstream.
pub const EXPORT_JPEG_QUALITY: u8 = 95;

/// Writes the scene in the CDnet directory layout rooted at `dir`:
/// `input/in%06d.jpg`, `groundtruth/gt%06d.png` (all-zero for object-free
/// frames), `temporalROI.txt` covering exactly the test split, an all-inside
/// `ROI.bmp`, `tags.txt`, and the extra `dynamicGT.png` carrying the
/// dynamic-texture ground truth.
pub fn export_cdnet_scene(spec: &SynthSceneSpec, dir: &Path) -> Result<SynthScene> {
    let scene = generate_scene(spec)?;
    let input_dir = dir.join("input");
    let gt_dir = dir.join("groundtruth");
    std::fs::create_dir_all(&input_dir).map_err(|e| Error::io(&input_dir, e))?;
    std::fs::create_dir_all(&gt_dir).map_err(|e| Error::io(&gt_dir, e))?;

    let (h, w) = spec.size;
    let empty_mask: BinaryMask = Array2::default((h, w));
    let all_frames = scene.train_frames.iter().chain(scene.test_frames.iter());
    for (i, frame) in all_frames.enumerate() {
        let index = i + 1;
        save_image_jpeg(&input_dir.join(cdnet_frame_name(index)), frame, EXPORT_JPEG_QUALITY)?;
        let gt = if index > spec.n_train {
            &scene.gt_object_masks[index - spec.n_train - 1]
        } else {
            &empty_mask
        };
        save_mask_png(&gt_dir.join(cdnet_gt_name(index)), gt)?;
    }

    let troi_path = dir.join("temporalROI.txt");
    std::fs::write(&troi_path, format!("{} {}\n", spec.n_train + 1, spec.n_total()))
        .map_err(|e| Error::io(&troi_path, e))?;

    let roi = image::RgbImage::from_pixel(w as u32, h as u32, image::Rgb([255, 255, 255]));
    let roi_path = dir.join("ROI.bmp");
    roi.save(&roi_path).map_err(|source| Error::ImageEncode {
        path: roi_path.clone(),
        source,
    })?;

    let tags_path = dir.join("tags.txt");
    let tags_text: String =
        scene.tags.iter().map(|&t| if t { "1\n" } else { "0\n" }).collect();
    std::fs::write(&tags_path, tags_text).map_err(|e| Error::io(&tags_path, e))?;

    save_mask_png(&dir.join("dynamicGT.png"), &scene.gt_dynamic_masks[0])?;
    Ok(scene)
}
