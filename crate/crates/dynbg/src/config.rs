//! Run configuration: one TOML file with full defaulting, so an empty file
//! is a valid config and every omitted key takes its documented default.
//! Defaults mirror the method's reference settings: alpha 0.2, beta 0.08,
//! autoencoder lr 1e-4, U-Net lr 5e-3, 50 epochs each, at most 300 training
//! frames.
//!
//! Unknown keys are rejected rather than ignored: a typo like `lr` for
//! `learning_rate` would otherwise silently fall back to the default and
//! corrupt an experiment without any visible sign.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{ScalePolicy, DEFAULT_MAX_DIM, DEFAULT_MAX_TRAINING_FRAMES};
use crate::error::{Error, Result};
use crate::labels::LabelPrepConfig;
use crate::nn::TrainConfig;
use crate::nn::unet::UNetSpec;
use crate::pipeline::{PipelineMode, PipelineParams, PostProcParams, ThresholdParams};

/// On-disk layout of the input sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetLayout {
    #[default]
    Cdnet,
    I2r,
    /// `path` names a [`crate::synth::SynthSceneSpec`] TOML file (or is empty
    /// for the default spec); the scene is exported under the output
    /// directory in CDnet layout and consumed from there.
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub layout: DatasetLayout,
    pub path: PathBuf,
    /// I2R layout only: sparse ground-truth mapping file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt_map: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            layout: DatasetLayout::Cdnet,
            path: PathBuf::new(),
            gt_map: None,
        }
    }
}

/// Downscaling cap on the longer frame side; `0` disables scaling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleSection {
    pub max_dim: usize,
}

impl Default for ScaleSection {
    fn default() -> Self {
        ScaleSection {
            max_dim: DEFAULT_MAX_DIM,
        }
    }
}

impl ScaleSection {
    pub fn policy(&self) -> ScalePolicy {
        ScalePolicy {
            max_dim: (self.max_dim > 0).then_some(self.max_dim),
        }
    }
}

/// Partially specified training hyperparameters; unset keys resolve to the
/// per-network defaults.
#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainOverride {
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
}

impl TrainOverride {
    fn resolve(self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

fn de_ae_train<'de, D>(d: D) -> std::result::Result<TrainConfig, D::Error>
where
    D: serde::Deserializer<'de>,
{
    Ok(TrainOverride::deserialize(d)?.resolve(TrainConfig::ae_defaults()))
}

fn de_unet_train<'de, D>(d: D) -> std::result::Result<TrainConfig, D::Error>
where
    D: serde::Deserializer<'de>,
{
    Ok(TrainOverride::deserialize(d)?.resolve(TrainConfig::unet_defaults()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    /// Cap on object-free frames used for training.
    pub max_frames: usize,
    /// Explicit 1-based training frame indices; overrides automatic
    /// selection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explicit_indices: Option<Vec<usize>>,
    #[serde(deserialize_with = "de_ae_train")]
    pub ae: TrainConfig,
    #[serde(deserialize_with = "de_unet_train")]
    pub unet: TrainConfig,
    /// Per-level U-Net widths; omitted = reference widths
    /// [64, 128, 256, 512, 1024]. Smaller widths trade accuracy for speed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unet_features: Option<Vec<usize>>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            max_frames: DEFAULT_MAX_TRAINING_FRAMES,
            explicit_indices: None,
            ae: TrainConfig::ae_defaults(),
            unet: TrainConfig::unet_defaults(),
            unet_features: None,
        }
    }
}

/// Complete description of one run. TOML sections: `[dataset]`, `[scale]`,
/// `[training]` (with `[training.ae]`, `[training.unet]`), `[label_prep]`,
/// `[thresholds]`, `[postproc]`, plus top-level `mode`, `output_dir`,
/// `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: PipelineMode,
    pub output_dir: PathBuf,
    /// Run seed. Each stage derives its RNG stream from this value XORed
    /// with the per-stage seed fields below (which default to 0).
    pub seed: u64,
    pub dataset: DatasetSection,
    pub scale: ScaleSection,
    pub training: TrainingSection,
    pub label_prep: LabelPrepConfig,
    pub thresholds: ThresholdParams,
    pub postproc: PostProcParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: PipelineMode::Online,
            output_dir: PathBuf::from("out"),
            seed: 0,
            dataset: DatasetSection::default(),
            scale: ScaleSection::default(),
            training: TrainingSection::default(),
            label_prep: LabelPrepConfig::default(),
            thresholds: ThresholdParams::default(),
            postproc: PostProcParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            reason: format!("config parse error: {e}"),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialized form; identifies a run in the
    /// manifest.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml_string().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.training.ae.validate()?;
        self.training.unet.validate()?;
        self.label_prep.validate()?;
        self.thresholds.validate()?;
        self.postproc.validate()?;
        if self.training.max_frames == 0 {
            return Err(Error::Config {
                reason: "training.max_frames must be >= 1".into(),
            });
        }
        if let Some(features) = &self.training.unet_features {
            self.unet_spec_with(features.clone()).validate()?;
        }
        Ok(())
    }

    /// Effective autoencoder training config under the run seed.
    pub fn ae_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed ^ self.training.ae.seed,
            ..self.training.ae
        }
    }

    /// Effective U-Net training config under the run seed.
    pub fn unet_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed ^ self.training.unet.seed,
            ..self.training.unet
        }
    }

    fn unet_spec_with(&self, features: Vec<usize>) -> UNetSpec {
        UNetSpec {
            features,
            ..UNetSpec::default()
        }
    }

    /// U-Net architecture for this run (reference widths unless overridden).
    pub fn unet_spec(&self) -> UNetSpec {
        match &self.training.unet_features {
            Some(f) => self.unet_spec_with(f.clone()),
            None => UNetSpec::default(),
        }
    }

    /// Inference-stage parameters bundled for the pipeline. The channel
    /// reduction is shared with label preparation: the same residual
    /// operator drives both.
    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams {
            thresholds: self.thresholds,
            postproc: self.postproc,
            channel_reduce: self.label_prep.channel_reduce,
            mode: self.mode,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::ChannelReduce;

    #[test]
    fn empty_config_is_all_defaults() {
        let config = RunConfig::from_toml_str("").unwrap();
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.thresholds.alpha, 0.2);
        assert_eq!(config.thresholds.beta, 0.08);
        assert_eq!(config.training.ae.learning_rate, 1e-4);
        assert_eq!(config.training.unet.learning_rate, 5e-3);
        assert_eq!(config.training.ae.epochs, 50);
        assert_eq!(config.training.unet.epochs, 50);
        assert_eq!(config.training.max_frames, 300);
        assert_eq!(config.label_prep.theta_label, 0.1);
        assert_eq!(config.unet_spec().features, vec![64, 128, 256, 512, 1024]);
    }

    #[test]
    fn partial_config_overrides_only_named_keys() {
        let text = r#"
            seed = 9
            mode = "batch-global"

            [thresholds]
            alpha = 0.3

            [training.unet]
            epochs = 3

            [training]
            unet_features = [8, 16, 32]

            [label_prep]
            channel_reduce = "mean"
        "#;
        let config = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.mode, PipelineMode::BatchGlobal);
        assert_eq!(config.thresholds.alpha, 0.3);
        assert_eq!(config.thresholds.beta, 0.08, "unnamed key keeps default");
        assert_eq!(config.training.unet.epochs, 3);
        assert_eq!(config.training.unet.batch_size, 4);
        assert_eq!(config.unet_spec().features, vec![8, 16, 32]);
        assert_eq!(config.label_prep.channel_reduce, ChannelReduce::Mean);
        assert_eq!(config.pipeline_params().channel_reduce, ChannelReduce::Mean);
    }

    #[test]
    fn round_trip_preserves_equality() {
        let mut config = RunConfig::default();
        config.seed = 1234;
        config.dataset.layout = DatasetLayout::Synthetic;
        config.dataset.path = PathBuf::from("scene.toml");
        config.training.unet_features = Some(vec![8, 16, 32, 64, 128]);
        config.training.explicit_indices = Some(vec![1, 5, 9]);
        config.scale.max_dim = 0;
        let text = config.to_toml_string();
        let reparsed = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(config, reparsed);
        let text2 = reparsed.to_toml_string();
        assert_eq!(text, text2, "serialization is canonical");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml_str("[thresholds]\nalpha = 0.0").is_err());
        assert!(RunConfig::from_toml_str("[postproc]\nmedian_kernel = 4").is_err());
        assert!(RunConfig::from_toml_str("[training]\nmax_frames = 0").is_err());
        assert!(RunConfig::from_toml_str("[training]\nunet_features = [64]").is_err());
        assert!(RunConfig::from_toml_str("[training.ae]\nepochs = 0").is_err());
        assert!(RunConfig::from_toml_str("[label_prep]\ntheta_label = 1.5").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "typo_key = 1",
            "[thresholds]\nalfa = 0.2",
            "[training.ae]\nlr = 0.01",
            "[training]\nunet_feature = [8, 16]",
            "[dataset]\nlayot = \"cdnet\"",
        ] {
            let err = RunConfig::from_toml_str(text).unwrap_err();
            assert!(
                matches!(err, Error::Config { .. }),
                "{text:?} should be a config error, got {err:?}"
            );
        }
        // The error message names the offending key so the typo is findable.
        let err = RunConfig::from_toml_str("[training.ae]\nlr = 0.01").unwrap_err();
        assert!(err.to_string().contains("lr"), "message was: {err}");
    }

    #[test]
    fn scale_section_maps_to_policy() {
        let on = ScaleSection { max_dim: 100 };
        assert_eq!(on.policy().max_dim, Some(100));
        let off = ScaleSection { max_dim: 0 };
        assert_eq!(off.policy().max_dim, None);
        assert_eq!(ScaleSection::default().policy(), ScalePolicy::default());
    }

    #[test]
    fn stage_seeds_derive_from_run_seed() {
        let mut config = RunConfig::default();
        config.seed = 0xAB;
        assert_eq!(config.ae_train_config().seed, 0xAB);
        assert_eq!(config.unet_train_config().seed, 0xAB);
        config.training.unet.seed = 0x10;
        assert_eq!(config.unet_train_config().seed, 0xAB ^ 0x10);
    }
}
