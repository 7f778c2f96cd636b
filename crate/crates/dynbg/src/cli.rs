//! Command orchestration: each public `cmd_*` function is one subcommand of
//! the binary, returning errors tagged with the pipeline stage that raised
//! them. Every command is deterministic under a fixed config + seed; output
//! files are byte-identical across reruns (timestamps appear only in logs).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{DatasetLayout, RunConfig};
use crate::dataset::{
    self, load_cdnet_sequence, load_i2r_sequence, select_training_frames, ManifestFrames,
    SequenceManifest,
};
use crate::error::{Error, Result};
use crate::eval::{
    self, benchmark_fps, evaluate_sequence, markdown_summary, median_baseline, EvalReport,
    FpsRecord,
};
use crate::labels::{make_dynamic_labels, save_labels};
use crate::nn::ae::{train_autoencoder, Autoencoder, AE_HIDDEN_UNITS};
use crate::nn::checkpoint::{autoencoder_from_checkpoint, unet_from_checkpoint};
use crate::nn::unet::{train_unet, UNet};
use crate::nn::{ArchSpec, Checkpoint, ModelKind};
use crate::pipeline::calibrate_max_f;
use crate::synth::{export_cdnet_scene, SynthScene, SynthSceneSpec};
use crate::types::{save_mask_png, upscale_mask_nearest, ImageTensor};

/// An error annotated with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StagedError {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StagedError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.stage, self.error)
    }
}

impl std::error::Error for StagedError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl StagedError {
    pub fn exit_code(&self) -> i32 {
        self.error.exit_code()
    }
}

pub type CliResult<T> = std::result::Result<T, StagedError>;

trait Stage<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|error| StagedError { stage, error })
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::io(path.to_path_buf(), e)
}

/// Canonical output locations under the run's output directory.
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        OutputLayout { root: root.into() }
    }

    pub fn ae_checkpoint(&self) -> PathBuf {
        self.root.join("ae.ckpt")
    }
    pub fn unet_checkpoint(&self) -> PathBuf {
        self.root.join("unet.ckpt")
    }
    pub fn labels_dir(&self) -> PathBuf {
        self.root.join("labels")
    }
    pub fn masks_dir(&self) -> PathBuf {
        self.root.join("masks")
    }
    pub fn run_manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }
    pub fn inference_csv(&self) -> PathBuf {
        self.root.join("inference.csv")
    }
    pub fn eval_csv(&self) -> PathBuf {
        self.root.join("eval.csv")
    }
    pub fn eval_md(&self) -> PathBuf {
        self.root.join("eval.md")
    }
    pub fn benchmark_log(&self) -> PathBuf {
        self.root.join("benchmark.jsonl")
    }
    pub fn scene_dir(&self) -> PathBuf {
        self.root.join("scene")
    }
}

/// Everything `cmd_train` records for reproducibility. Serialized as
/// `run_manifest.json`; reruns with the same config + data produce an
/// identical file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub sequence: String,
    pub training_frame_indices: Vec<usize>,
    pub working_size: [usize; 3],
    /// Bit pattern of the calibrated initial max-foreground value (exact).
    pub calibration_max_f_bits: u32,
    /// The same value, human-readable.
    pub calibration_max_f: f64,
    pub ae_final_loss: f64,
    pub unet_final_loss: f64,
}

impl RunManifest {
    pub fn calibration_max_f(&self) -> f32 {
        f32::from_bits(self.calibration_max_f_bits)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config {
            reason: format!("run manifest {} is not valid JSON: {e}", path.display()),
        })
    }
}

fn parse_scene_spec(path: &Path) -> Result<SynthSceneSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let spec: SynthSceneSpec = toml::from_str(&text).map_err(|e| Error::Config {
        reason: format!("scene spec parse error in {}: {e}", path.display()),
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Resolves the configured dataset into a sequence manifest. For the
/// synthetic layout the scene is (re-)exported deterministically under
/// `output_dir/scene` first.
pub fn load_manifest(config: &RunConfig) -> CliResult<SequenceManifest> {
    let out = OutputLayout::new(&config.output_dir);
    let result = (|| -> Result<SequenceManifest> {
        match config.dataset.layout {
            DatasetLayout::Cdnet => load_cdnet_sequence(&config.dataset.path),
            DatasetLayout::I2r => {
                load_i2r_sequence(&config.dataset.path, config.dataset.gt_map.as_deref())
            }
            DatasetLayout::Synthetic => {
                let spec = if config.dataset.path.as_os_str().is_empty() {
                    SynthSceneSpec::default()
                } else {
                    parse_scene_spec(&config.dataset.path)?
                };
                let dir = out.scene_dir();
                std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
                export_cdnet_scene(&spec, &dir)?;
                load_cdnet_sequence(&dir)
            }
        }
    })();
    result.stage("data_ingest")
}

fn load_training_frames(
    config: &RunConfig,
    manifest: &SequenceManifest,
) -> CliResult<(Vec<usize>, Vec<ImageTensor>, (usize, usize))> {
    let working = manifest.working_size(&config.scale.policy());
    let indices = select_training_frames(
        manifest,
        config.training.max_frames,
        config.training.explicit_indices.as_deref(),
    )
    .stage("data_ingest")?;
    let mut frames = Vec::with_capacity(indices.len());
    for &i in &indices {
        frames.push(manifest.load_frame(i, working).stage("data_ingest")?);
    }
    Ok((indices, frames, working))
}

/// Trains both networks on the scene's object-free frames, then writes the
/// two checkpoints, the prepared dynamic-background label masks, and the run
/// manifest.
pub fn cmd_train(config: &RunConfig) -> CliResult<RunManifest> {
    config.validate().stage("config")?;
    let out = OutputLayout::new(&config.output_dir);
    std::fs::create_dir_all(&out.root)
        .map_err(|e| io_err(&out.root, e))
        .stage("config")?;

    let manifest = load_manifest(config)?;
    let (indices, frames, working) = load_training_frames(config, &manifest)?;
    log(format!(
        "training on {} object-free frames at {}x{}",
        frames.len(),
        working.0,
        working.1
    ));

    let ae_training = train_autoencoder(&frames, &config.ae_train_config()).stage("train_static")?;
    let mut ae = ae_training.model;
    log(format!(
        "autoencoder final loss {:.6}",
        ae_training.loss_history.last().copied().unwrap_or(f64::NAN)
    ));

    let labels = make_dynamic_labels(&frames, &mut ae, &config.label_prep).stage("label_prep")?;
    let labels_dir = out.labels_dir();
    std::fs::create_dir_all(&labels_dir)
        .map_err(|e| io_err(&labels_dir, e))
        .stage("label_prep")?;
    save_labels(&labels_dir, &labels).stage("label_prep")?;

    let unet_training = train_unet(
        &frames,
        &labels,
        &config.unet_spec(),
        &config.unet_train_config(),
    )
    .stage("train_dynamic")?;
    let mut unet = unet_training.model;
    log(format!(
        "u-net final loss {:.6}",
        unet_training.loss_history.last().copied().unwrap_or(f64::NAN)
    ));

    let max_f = calibrate_max_f(
        &frames,
        &mut ae,
        &mut unet,
        config.label_prep.channel_reduce,
    )
    .stage("calibrate")?;

    let working_size = (working.0, working.1, 3);
    let fingerprint = config.hash();
    Checkpoint::from_model(
        &mut ae,
        ModelKind::Autoencoder,
        ArchSpec::Autoencoder {
            input_dim: working_size.0 * working_size.1 * working_size.2,
            hidden_units: AE_HIDDEN_UNITS.to_vec(),
        },
        working_size,
        config.seed,
        fingerprint.clone(),
    )
    .save(&out.ae_checkpoint())
    .stage("checkpoint")?;
    let spec = config.unet_spec();
    Checkpoint::from_model(
        &mut unet,
        ModelKind::Unet,
        ArchSpec::Unet {
            in_channels: spec.in_channels,
            features: spec.features.clone(),
        },
        working_size,
        config.seed,
        fingerprint.clone(),
    )
    .save(&out.unet_checkpoint())
    .stage("checkpoint")?;

    let run_manifest = RunManifest {
        config_hash: fingerprint,
        seed: config.seed,
        sequence: manifest.name.clone(),
        training_frame_indices: indices,
        working_size: [working_size.0, working_size.1, working_size.2],
        calibration_max_f_bits: max_f.to_bits(),
        calibration_max_f: f64::from(max_f),
        ae_final_loss: ae_training.loss_history.last().copied().unwrap_or(f64::NAN),
        unet_final_loss: unet_training.loss_history.last().copied().unwrap_or(f64::NAN),
    };
    run_manifest.save(&out.run_manifest()).stage("checkpoint")?;
    log(format!(
        "wrote {} and {}",
        out.ae_checkpoint().display(),
        out.unet_checkpoint().display()
    ));
    Ok(run_manifest)
}

/// Loads both checkpoints and validates them against the scene's working
/// size before any frame is read.
fn load_models(
    config: &RunConfig,
    manifest: &SequenceManifest,
) -> CliResult<(Autoencoder<f32>, UNet<f32>, (usize, usize))> {
    let out = OutputLayout::new(&config.output_dir);
    let working = manifest.working_size(&config.scale.policy());
    let expected = [working.0, working.1, 3];

    let load = |path: PathBuf, kind: ModelKind| -> Result<Checkpoint> {
        let ckpt = Checkpoint::load(&path)?;
        let got = [
            ckpt.working_size.0,
            ckpt.working_size.1,
            ckpt.working_size.2,
        ];
        if got != expected {
            return Err(Error::Checkpoint {
                path,
                reason: format!(
                    "{kind} checkpoint was trained at working size {got:?}, \
                     but this scene resolves to {expected:?}"
                ),
            });
        }
        Ok(ckpt)
    };

    let ae_ckpt = load(out.ae_checkpoint(), ModelKind::Autoencoder).stage("checkpoint")?;
    let ae = autoencoder_from_checkpoint(&ae_ckpt, &out.ae_checkpoint()).stage("checkpoint")?;
    let unet_ckpt = load(out.unet_checkpoint(), ModelKind::Unet).stage("checkpoint")?;
    let unet = unet_from_checkpoint(&unet_ckpt, &out.unet_checkpoint()).stage("checkpoint")?;
    Ok((ae, unet, working))
}

/// Initial running-max calibration: reuse the value recorded by `cmd_train`
/// when the run manifest matches this config; otherwise recompute it from
/// the training frames.
fn calibration_value(
    config: &RunConfig,
    manifest: &SequenceManifest,
    ae: &mut Autoencoder<f32>,
    unet: &mut UNet<f32>,
) -> CliResult<f32> {
    let out = OutputLayout::new(&config.output_dir);
    if let Ok(run) = RunManifest::load(&out.run_manifest()) {
        if run.config_hash == config.hash() {
            return Ok(run.calibration_max_f());
        }
        log("run manifest belongs to a different config; recalibrating".to_string());
    }
    let (_, frames, _) = load_training_frames(config, manifest)?;
    calibrate_max_f(&frames, ae, unet, config.label_prep.channel_reduce).stage("calibrate")
}

/// One row of the inference diagnostics CSV.
pub const INFERENCE_CSV_HEADER: &str = "frame,foreground_pixels,max_f,mean_c";

/// Segments the temporal-ROI range and writes one native-resolution
/// `bin%06d.png` per frame plus the diagnostics CSV.
pub fn cmd_infer(config: &RunConfig) -> CliResult<usize> {
    config.validate().stage("config")?;
    let manifest = load_manifest(config)?;
    let (mut ae, mut unet, working) = load_models(config, &manifest)?;
    let max_f0 = calibration_value(config, &manifest, &mut ae, &mut unet)?;

    let out = OutputLayout::new(&config.output_dir);
    let masks_dir = out.masks_dir();
    std::fs::create_dir_all(&masks_dir)
        .map_err(|e| io_err(&masks_dir, e))
        .stage("segment")?;

    let (first, last) = manifest.temporal_roi;
    let mut provider = ManifestFrames::new(&manifest, (first, last), working);
    let native = manifest.native_size;
    let mut csv = String::from(INFERENCE_CSV_HEADER);
    csv.push('\n');
    let mut frames_out = 0usize;

    crate::pipeline::run_pipeline(
        &mut provider,
        &mut ae,
        &mut unet,
        &config.pipeline_params(),
        max_f0,
        first,
        |result| {
            let native_mask = upscale_mask_nearest(&result.s_postproc, native);
            save_mask_png(
                &masks_dir.join(dataset::mask_file_name(result.frame_index)),
                &native_mask,
            )?;
            csv.push_str(&format!(
                "{},{},{:.6},{:.8}\n",
                result.frame_index,
                native_mask.iter().filter(|&&v| v).count(),
                result.max_f,
                result.mean_c,
            ));
            frames_out += 1;
            Ok(())
        },
    )
    .stage("segment")?;

    std::fs::write(out.inference_csv(), csv)
        .map_err(|e| io_err(&out.inference_csv(), e))
        .stage("segment")?;
    log(format!(
        "wrote {frames_out} masks to {}",
        masks_dir.display()
    ));
    Ok(frames_out)
}

/// Scores the masks in `masks_dir` (default: the run's own masks directory)
/// against the sequence ground truth; writes CSV + Markdown reports.
pub fn cmd_evaluate(config: &RunConfig, masks_dir: Option<&Path>) -> CliResult<EvalReport> {
    config.validate().stage("config")?;
    let manifest = load_manifest(config)?;
    let out = OutputLayout::new(&config.output_dir);
    let masks_dir = masks_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.masks_dir());
    let report = evaluate_sequence(&manifest, &masks_dir).stage("evaluate")?;
    eval::write_reports_csv(&out.eval_csv(), std::slice::from_ref(&report)).stage("evaluate")?;
    let md = markdown_summary(std::slice::from_ref(&report));
    std::fs::write(out.eval_md(), &md)
        .map_err(|e| io_err(&out.eval_md(), e))
        .stage("evaluate")?;
    print!("{md}");
    Ok(report)
}

/// Benchmark options.
#[derive(Clone, Copy, Debug)]
pub struct BenchmarkOptions {
    /// Frames per timed pass (capped by the sequence length).
    pub frames: usize,
    pub warmup: usize,
    pub repeats: usize,
    /// Also measure freshly initialised models at half and quarter linear
    /// scale to log the FPS-vs-area trend.
    pub trend: bool,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            frames: 30,
            warmup: 2,
            repeats: 3,
            trend: false,
        }
    }
}

/// Measures end-to-end throughput with the trained checkpoints and appends
/// structured records to `benchmark.jsonl`. With `trend`, adds records for
/// half- and quarter-scale inputs using freshly initialised models of the
/// same architecture (throughput does not depend on the weights).
pub fn cmd_benchmark(config: &RunConfig, options: &BenchmarkOptions) -> CliResult<Vec<FpsRecord>> {
    config.validate().stage("config")?;
    let manifest = load_manifest(config)?;
    let (mut ae, mut unet, working) = load_models(config, &manifest)?;

    let (first, last) = manifest.temporal_roi;
    let take = options.frames.max(1).min(last + 1 - first);
    let mut frames = Vec::with_capacity(take);
    for t in first..first + take {
        frames.push(manifest.load_frame(t, working).stage("data_ingest")?);
    }

    let params = config.pipeline_params();
    let mut records = Vec::new();
    let record = benchmark_fps(
        &frames,
        &mut ae,
        &mut unet,
        &params,
        options.warmup,
        options.repeats,
    )
    .stage("benchmark")?;
    println!("{}", record.to_json());
    records.push(record);

    if options.trend {
        for divisor in [2usize, 4] {
            let (h, w) = (working.0 / divisor, working.1 / divisor);
            if h < 4 || w < 4 {
                continue;
            }
            let scaled: Vec<ImageTensor> = (first..first + take)
                .map(|t| manifest.load_frame(t, (h, w)))
                .collect::<Result<_>>()
                .stage("data_ingest")?;
            let mut ae_s = Autoencoder::new(h * w * 3, config.seed).stage("benchmark")?;
            let mut unet_s =
                UNet::new(config.unet_spec(), config.seed).stage("benchmark")?;
            let record = benchmark_fps(
                &scaled,
                &mut ae_s,
                &mut unet_s,
                &params,
                options.warmup,
                options.repeats,
            )
            .stage("benchmark")?;
            println!("{}", record.to_json());
            records.push(record);
        }
    }

    let out = OutputLayout::new(&config.output_dir);
    std::fs::create_dir_all(&out.root)
        .map_err(|e| io_err(&out.root, e))
        .stage("benchmark")?;
    for record in &records {
        eval::append_fps_log(&out.benchmark_log(), record).stage("benchmark")?;
    }
    Ok(records)
}

/// Generates a synthetic scene (default spec unless a TOML spec file is
/// given) and exports it in CDnet layout.
pub fn cmd_synth(spec_path: Option<&Path>, out_dir: &Path) -> CliResult<SynthScene> {
    let spec = match spec_path {
        Some(p) => parse_scene_spec(p).stage("synth")?,
        None => SynthSceneSpec::default(),
    };
    std::fs::create_dir_all(out_dir)
        .map_err(|e| io_err(out_dir, e))
        .stage("synth")?;
    let scene = export_cdnet_scene(&spec, out_dir).stage("synth")?;
    log(format!(
        "exported {} training + {} test frames to {}",
        scene.train_frames.len(),
        scene.test_frames.len(),
        out_dir.display()
    ));
    Ok(scene)
}

/// Runs the naive temporal-median foil over the evaluation range and writes
/// its masks (same format as `cmd_infer`) into `masks_dir`.
pub fn cmd_baseline(config: &RunConfig, masks_dir: &Path) -> CliResult<usize> {
    config.validate().stage("config")?;
    let manifest = load_manifest(config)?;
    let (_, frames, working) = load_training_frames(config, &manifest)?;
    std::fs::create_dir_all(masks_dir)
        .map_err(|e| io_err(masks_dir, e))
        .stage("baseline")?;

    let (first, last) = manifest.temporal_roi;
    let mut provider = ManifestFrames::new(&manifest, (first, last), working);
    let native = manifest.native_size;
    let mut written = 0usize;
    median_baseline(
        &frames,
        &mut provider,
        config.label_prep.theta_label,
        &config.postproc,
        config.label_prep.channel_reduce,
        |offset, mask| {
            let index = first + offset - 1;
            let native_mask = upscale_mask_nearest(&mask, native);
            save_mask_png(&masks_dir.join(dataset::mask_file_name(index)), &native_mask)?;
            written += 1;
            Ok(())
        },
    )
    .stage("baseline")?;
    log(format!("baseline wrote {written} masks to {}", masks_dir.display()));
    Ok(written)
}

/// train + infer + evaluate in sequence.
pub fn cmd_run_all(config: &RunConfig) -> CliResult<EvalReport> {
    cmd_train(config)?;
    cmd_infer(config)?;
    cmd_evaluate(config, None)
}

/// Progress logging to stderr (stdout carries only machine-readable output).
fn log(message: String) {
    eprintln!("dynbg: {message}");
}
