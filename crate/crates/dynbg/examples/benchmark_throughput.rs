//! Measure end-to-end inference throughput (frames per second).
//!
//!     cargo run --release --example benchmark_throughput
//!
//! Times the full per-frame pipeline — background reconstruction, dynamic
//! mask prediction, thresholding, post-processing — over an in-memory
//! synthetic sequence, at three input scales. Warm-up frames are excluded
//! and the reported FPS is the median of the repeats. Throughput does not
//! depend on the trained weights, so freshly initialised models are used.

use dynbg::eval::benchmark_fps;
use dynbg::nn::ae::Autoencoder;
use dynbg::nn::unet::{UNet, UNetSpec};
use dynbg::pipeline::PipelineParams;
use dynbg::synth::{generate_scene, Rect, SynthSceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = PipelineParams::default();
    // Narrow U-Net so the example finishes quickly; pass the reference
    // widths [64, 128, 256, 512, 1024] to measure the full-size model.
    let features = vec![8, 16, 32, 64, 128];

    for (h, w) in [(64usize, 64usize), (32, 32), (16, 16)] {
        let spec = SynthSceneSpec {
            size: (h, w),
            n_train: 2,
            n_test: 12,
            dynamic_region: Rect { y: h / 8, x: w / 2, h: h / 4, w: w / 4 },
            object_side: (h / 8).max(2),
            object_start: (h as f32 / 2.0, 1.0),
            object_velocity: (0.0, 0.5),
            ..SynthSceneSpec::default()
        };
        let scene = generate_scene(&spec)?;

        let mut ae = Autoencoder::new(h * w * 3, 0)?;
        let mut unet = UNet::new(
            UNetSpec { in_channels: 3, features: features.clone() },
            0,
        )?;
        let record = benchmark_fps(&scene.test_frames, &mut ae, &mut unet, &params, 2, 3)?;
        println!(
            "{:>3}x{:<3} ({:5} px): {:8.1} fps  (runs: {:?})",
            h,
            w,
            h * w,
            record.fps,
            record.runs.iter().map(|r| r.round()).collect::<Vec<_>>()
        );
        println!("  record: {}", record.to_json());
    }
    Ok(())
}
