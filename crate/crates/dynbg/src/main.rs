//! Thin command-line front end: argument parsing, config resolution
//! (defaults < config file < flags), and exit-code mapping. All real work
//! lives in the library's `cli` module.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dynbg::cli::{self, BenchmarkOptions};
use dynbg::config::RunConfig;
use dynbg::pipeline::PipelineMode;

#[derive(Parser)]
#[command(
    name = "dynbg",
    about = "Per-scene dynamic background subtraction: autoencoder + U-Net \
             trained on object-free frames",
    version
)]
struct Cli {
    #[command(flatten)]
    overrides: ConfigOverrides,

    #[command(subcommand)]
    command: Command,
}

/// Settings priority: built-in defaults, then the config file, then these
/// flags.
#[derive(Args)]
struct ConfigOverrides {
    /// Run configuration TOML file (all keys optional).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Override the dataset path.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,

    /// Override the thresholding mode.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<PipelineMode>,
}

fn parse_mode(s: &str) -> Result<PipelineMode, String> {
    match s {
        "online" => Ok(PipelineMode::Online),
        "batch-global" => Ok(PipelineMode::BatchGlobal),
        other => Err(format!("unknown mode {other:?} (expected online | batch-global)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train both networks on the scene's object-free frames; write
    /// checkpoints, label masks, and the run manifest.
    Train,
    /// Segment the evaluation range with existing checkpoints; write
    /// bin%06d.png masks and the diagnostics CSV.
    Infer,
    /// Score written masks against ground truth; write CSV + Markdown
    /// reports.
    Evaluate {
        /// Directory of bin%06d.png masks (default: <output_dir>/masks).
        #[arg(long)]
        masks_dir: Option<PathBuf>,
    },
    /// Measure end-to-end throughput and append records to benchmark.jsonl.
    Benchmark {
        /// Frames per timed pass.
        #[arg(long, default_value_t = 30)]
        frames: usize,
        /// Untimed warm-up frames per repeat.
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        /// Timed repeats (the reported FPS is their median).
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Also log half- and quarter-scale records (FPS-vs-area trend).
        #[arg(long)]
        trend: bool,
    },
    /// Generate a synthetic scene and export it in CDnet layout.
    Synth {
        /// Scene spec TOML file (default: built-in default scene).
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory for the exported scene.
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment with the temporal-median baseline instead of the networks.
    Baseline {
        /// Directory to write the baseline masks into.
        #[arg(long)]
        masks_dir: PathBuf,
    },
    /// train + infer + evaluate.
    RunAll,
}

fn resolve_config(overrides: &ConfigOverrides) -> Result<RunConfig, cli::StagedError> {
    let mut config = match &overrides.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
    .map_err(|error| cli::StagedError {
        stage: "config",
        error,
    })?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(dir) = &overrides.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(path) = &overrides.dataset {
        config.dataset.path = path.clone();
    }
    if let Some(mode) = overrides.mode {
        config.mode = mode;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), cli::StagedError> {
    match cli.command {
        Command::Synth { spec, out } => {
            cli::cmd_synth(spec.as_deref(), &out)?;
            Ok(())
        }
        command => {
            let config = resolve_config(&cli.overrides)?;
            match command {
                Command::Train => cli::cmd_train(&config).map(drop),
                Command::Infer => cli::cmd_infer(&config).map(drop),
                Command::Evaluate { masks_dir } => {
                    cli::cmd_evaluate(&config, masks_dir.as_deref()).map(drop)
                }
                Command::Benchmark {
                    frames,
                    warmup,
                    repeats,
                    trend,
                } => cli::cmd_benchmark(
                    &config,
                    &BenchmarkOptions {
                        frames,
                        warmup,
                        repeats,
                        trend,
                    },
                )
                .map(drop),
                Command::Baseline { masks_dir } => {
                    cli::cmd_baseline(&config, &masks_dir).map(drop)
                }
                Command::RunAll => cli::cmd_run_all(&config).map(drop),
                Command::Synth { .. } => unreachable!("handled above"),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dynbg: error {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
