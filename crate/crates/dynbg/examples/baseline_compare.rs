//! Compare the learned pipeline against the temporal-median baseline.
//!
//!     cargo run --example baseline_compare
//!
//! The baseline models the background as the per-pixel temporal median of
//! the training frames and thresholds the residual — no dynamic-background
//! model, no entropy map. On a scene with oscillating texture it fires on
//! the texture as well as the object; the learned pipeline suppresses the
//! texture and keeps the object.

use dynbg::dataset::VecFrames;
use dynbg::eval::{compare_masks, f_measure, median_baseline, ConfusionCounts};
use dynbg::labels::{make_dynamic_labels, LabelPrepConfig};
use dynbg::nn::unet::{train_unet, UNetSpec};
use dynbg::nn::{train_autoencoder, TrainConfig};
use dynbg::pipeline::{calibrate_max_f, run_pipeline, PipelineParams};
use dynbg::synth::{generate_scene, Rect, SynthSceneSpec};
use dynbg::types::BinaryMask;
use ndarray::Array2;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSceneSpec {
        size: (32, 32),
        n_train: 40,
        n_test: 12,
        dynamic_region: Rect { y: 4, x: 18, h: 12, w: 12 },
        object_start: (10.0, 2.0),
        object_velocity: (0.1, 1.2),
        ..SynthSceneSpec::default()
    };
    let scene = generate_scene(&spec)?;
    let roi = Array2::from_elem(spec.size, true);

    // Baseline masks.
    let mut baseline_masks: Vec<BinaryMask> = Vec::new();
    let mut provider = VecFrames::new(scene.test_frames.clone());
    let label_prep = LabelPrepConfig::default();
    median_baseline(
        &scene.train_frames,
        &mut provider,
        label_prep.theta_label,
        &PipelineParams::default().postproc,
        label_prep.channel_reduce,
        |_, mask| {
            baseline_masks.push(mask);
            Ok(())
        },
    )?;

    // Learned pipeline masks.
    let mut ae = train_autoencoder(
        &scene.train_frames,
        &TrainConfig { epochs: 30, ..TrainConfig::ae_defaults() },
    )?
    .model;
    let labels = make_dynamic_labels(&scene.train_frames, &mut ae, &label_prep)?;
    let mut unet = train_unet(
        &scene.train_frames,
        &labels,
        &UNetSpec::with_features(vec![8, 16, 32]),
        &TrainConfig { epochs: 15, ..TrainConfig::unet_defaults() },
    )?
    .model;
    let params = PipelineParams::default();
    let max_f0 = calibrate_max_f(&scene.train_frames, &mut ae, &mut unet, params.channel_reduce)?;
    let mut pipeline_masks: Vec<BinaryMask> = Vec::new();
    let mut provider = VecFrames::new(scene.test_frames.clone());
    run_pipeline(&mut provider, &mut ae, &mut unet, &params, max_f0, 1, |result| {
        pipeline_masks.push(result.s_postproc);
        Ok(())
    })?;

    // Score both against the exact object ground truth.
    let score = |masks: &[BinaryMask]| -> ConfusionCounts {
        let mut total = ConfusionCounts::default();
        for (mask, gt_mask) in masks.iter().zip(&scene.gt_object_masks) {
            let gt = gt_mask.mapv(|v| if v { 255u8 } else { 0 });
            total.add(&compare_masks(mask, &gt, &roi).expect("shapes match"));
        }
        total
    };
    let fm_baseline = f_measure(&score(&baseline_masks));
    let fm_pipeline = f_measure(&score(&pipeline_masks));
    println!("temporal-median baseline FM: {fm_baseline:.3}");
    println!("learned pipeline FM:         {fm_pipeline:.3}");
    println!("margin:                      {:+.3}", fm_pipeline - fm_baseline);
    Ok(())
}
