//! Train both networks on object-free frames and save checkpoints.
//!
//!     cargo run --example train_networks
//!
//! Shows the weak-supervision flow: the autoencoder learns the static
//! background from object-free frames; its reconstruction residuals,
//! thresholded, become the pixel labels that teach the U-Net where the
//! dynamic texture lives. No pixel was labelled by hand.
//!
//! This example shrinks the scene and the U-Net so it finishes in about a
//! minute; the library defaults implement the full-size reference setup
//! (U-Net widths [64, 128, 256, 512, 1024], 50 epochs each).

use dynbg::labels::{make_dynamic_labels, LabelPrepConfig};
use dynbg::nn::unet::{train_unet, UNetSpec};
use dynbg::nn::{train_autoencoder, ArchSpec, Checkpoint, ModelKind, TrainConfig};
use dynbg::synth::{generate_scene, Rect, SynthSceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSceneSpec {
        size: (32, 32),
        n_train: 40,
        n_test: 10,
        dynamic_region: Rect { y: 4, x: 18, h: 12, w: 12 },
        object_start: (10.0, 2.0),
        object_velocity: (0.1, 1.5),
        ..SynthSceneSpec::default()
    };
    let scene = generate_scene(&spec)?;
    println!("generated {} training frames", scene.train_frames.len());

    // 1. Static background: fully connected autoencoder on raw frames.
    let ae_config = TrainConfig {
        epochs: 30,
        ..TrainConfig::ae_defaults()
    };
    let ae_run = train_autoencoder(&scene.train_frames, &ae_config)?;
    let mut ae = ae_run.model;
    println!(
        "autoencoder loss: {:.1} -> {:.1}",
        ae_run.loss_history.first().unwrap(),
        ae_run.loss_history.last().unwrap()
    );

    // 2. Weak labels: residual > theta marks dynamic-background pixels.
    let labels = make_dynamic_labels(&scene.train_frames, &mut ae, &LabelPrepConfig::default())?;
    let labelled: usize = labels.iter().map(|m| m.iter().filter(|&&v| v).count()).sum();
    println!(
        "prepared {} label masks ({} dynamic pixels total)",
        labels.len(),
        labelled
    );

    // 3. Dynamic background: U-Net trained to reproduce those labels.
    let unet_spec = UNetSpec::with_features(vec![8, 16, 32]);
    let unet_config = TrainConfig {
        epochs: 15,
        ..TrainConfig::unet_defaults()
    };
    let unet_run = train_unet(&scene.train_frames, &labels, &unet_spec, &unet_config)?;
    let mut unet = unet_run.model;
    println!(
        "u-net loss: {:.4} -> {:.4}",
        unet_run.loss_history.first().unwrap(),
        unet_run.loss_history.last().unwrap()
    );

    // 4. Checkpoints.
    let dir = std::path::Path::new("target/example_checkpoints");
    std::fs::create_dir_all(dir)?;
    let working = (spec.size.0, spec.size.1, 3);
    Checkpoint::from_model(
        &mut ae,
        ModelKind::Autoencoder,
        ArchSpec::Autoencoder {
            input_dim: working.0 * working.1 * working.2,
            hidden_units: dynbg::nn::ae::AE_HIDDEN_UNITS.to_vec(),
        },
        working,
        spec.seed,
        "train_networks example",
    )
    .save(&dir.join("ae.ckpt"))?;
    Checkpoint::from_model(
        &mut unet,
        ModelKind::Unet,
        ArchSpec::Unet {
            in_channels: unet_spec.in_channels,
            features: unet_spec.features.clone(),
        },
        working,
        spec.seed,
        "train_networks example",
    )
    .save(&dir.join("unet.ckpt"))?;
    println!("checkpoints saved under {}", dir.display());
    Ok(())
}
