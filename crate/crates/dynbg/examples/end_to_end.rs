//! The complete weakly supervised flow through the command layer — the same
//! code path as the `dynbg` binary's `run-all` subcommand.
//!
//!     cargo run --example end_to_end
//!
//! Writes a synthetic scene, trains both networks, prepares weak labels,
//! segments the test range, and scores the masks, all under one config.
//! Everything lands under target/example_run; rerunning reproduces the
//! same bytes.

use dynbg::cli::{cmd_evaluate, cmd_infer, cmd_train};
use dynbg::config::{DatasetLayout, RunConfig};
use dynbg::synth::{Rect, SynthSceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::path::PathBuf::from("target/example_run");
    std::fs::create_dir_all(&out_dir)?;

    // A reduced scene + U-Net so the example finishes in a couple of
    // minutes. An empty [dataset] path would use the full default scene.
    let scene = SynthSceneSpec {
        size: (32, 32),
        n_train: 40,
        n_test: 12,
        dynamic_region: Rect { y: 4, x: 18, h: 12, w: 12 },
        object_start: (10.0, 2.0),
        object_velocity: (0.1, 1.2),
        ..SynthSceneSpec::default()
    };
    let spec_path = out_dir.join("scene_spec.toml");
    std::fs::write(&spec_path, toml::to_string_pretty(&scene)?)?;

    let mut config = RunConfig::from_toml_str(
        r#"
            seed = 3

            [training]
            unet_features = [8, 16, 32]

            [training.ae]
            epochs = 30

            [training.unet]
            epochs = 15
        "#,
    )?;
    config.dataset.layout = DatasetLayout::Synthetic;
    config.dataset.path = spec_path;
    config.output_dir = out_dir.clone();
    println!("config hash: {}", config.hash());

    let manifest = cmd_train(&config)?;
    println!(
        "trained on frames {:?} (calibrated max F {:.4})",
        &manifest.training_frame_indices[..5.min(manifest.training_frame_indices.len())],
        manifest.calibration_max_f()
    );

    let n = cmd_infer(&config)?;
    println!("segmented {n} frames");

    let report = cmd_evaluate(&config, None)?;
    println!(
        "recall {:.3}, precision {:.3}, FM {:.3} over {} frames",
        report.recall, report.precision, report.f_measure, report.frames_evaluated
    );
    println!("artifacts under {}", out_dir.display());
    Ok(())
}
