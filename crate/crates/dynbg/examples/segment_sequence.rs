//! Run the online segmentation pipeline over a frame stream.
//!
//!     cargo run --example segment_sequence
//!
//! Per frame: the autoencoder reconstructs the static background B, the
//! U-Net predicts the dynamic-background mask D, the residual |I - B|
//! suppressed by D gives the foreground image F, and two thresholds turn F
//! into the final mask — a global one for the initial segmentation and a
//! per-pixel distance threshold R = beta * max(F) + C built from the
//! dynamic entropy map C, which counts label flips between consecutive
//! frames. Frames are processed strictly one at a time.

use dynbg::dataset::VecFrames;
use dynbg::labels::{make_dynamic_labels, LabelPrepConfig};
use dynbg::nn::unet::{train_unet, UNetSpec};
use dynbg::nn::{train_autoencoder, TrainConfig};
use dynbg::pipeline::{calibrate_max_f, run_pipeline, PipelineParams};
use dynbg::synth::{generate_scene, Rect, SynthSceneSpec};
use dynbg::types::save_mask_png;

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

    // Quick training pass (see the train_networks example for details).
    let mut ae = train_autoencoder(
        &scene.train_frames,
        &TrainConfig { epochs: 30, ..TrainConfig::ae_defaults() },
    )?
    .model;
    let labels = make_dynamic_labels(&scene.train_frames, &mut ae, &LabelPrepConfig::default())?;
    let mut unet = train_unet(
        &scene.train_frames,
        &labels,
        &UNetSpec::with_features(vec![8, 16, 32]),
        &TrainConfig { epochs: 15, ..TrainConfig::unet_defaults() },
    )?
    .model;

    // Calibrate the running max over the training frames, then stream.
    let params = PipelineParams::default();
    let max_f0 = calibrate_max_f(&scene.train_frames, &mut ae, &mut unet, params.channel_reduce)?;
    println!("calibrated max F = {max_f0:.4}");

    let out_dir = std::path::Path::new("target/example_masks");
    std::fs::create_dir_all(out_dir)?;
    let mut provider = VecFrames::new(scene.test_frames.clone());
    run_pipeline(&mut provider, &mut ae, &mut unet, &params, max_f0, 1, |result| {
        let n_init = result.s_init.iter().filter(|&&v| v).count();
        let n_final = result.foreground_pixels();
        println!(
            "frame {:2}: {:3} px initial -> {:3} px final (mean C {:.4})",
            result.frame_index, n_init, n_final, result.mean_c
        );
        save_mask_png(
            &out_dir.join(dynbg::dataset::mask_file_name(result.frame_index)),
            &result.s_postproc,
        )
    })?;
    println!("masks written under {}", out_dir.display());
    Ok(())
}
