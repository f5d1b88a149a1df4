//! The run configuration: one TOML file with a section per module.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::AudioBranchConfig;
use crate::error::{bail, Error, Result};
use crate::fusion::FusionConfig;
use crate::model::ModelConfig;
use crate::text::TextBranchConfig;
use crate::train::{AdamConfig, LossKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Fusion-head epochs with the branches frozen.
    pub epochs: usize,
    /// Stage-one epochs per branch.
    pub branch_epochs: usize,
    /// Fusion epochs after the branches are unfrozen.
    pub finetune_epochs: usize,
    /// Utterances per fusion batch (whole videos are kept together).
    pub batch_size: usize,
    pub branch_batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss: LossKind,
    pub branch_loss: LossKind,
    pub runs: usize,
    /// Share of training videos held out for picking the best epoch.
    pub validation_fraction: f64,
    /// Branch dropout is drawn once per run from this range.
    pub branch_dropout: [f64; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            branch_epochs: 50,
            finetune_epochs: 5,
            batch_size: 32,
            branch_batch_size: 16,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            seed: 0,
            loss: LossKind::CrossEntropy,
            branch_loss: LossKind::Mae,
            runs: 3,
            validation_fraction: 0.1,
            branch_dropout: [0.3, 0.4],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.branch_batch_size == 0 {
            bail!(Config, "batch sizes must be at least 1");
        }
        if self.epochs == 0 || self.branch_epochs == 0 {
            bail!(Config, "epoch counts must be at least 1");
        }
        if self.runs == 0 {
            bail!(Config, "need at least one run");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            bail!(
                Config,
                "validation fraction {} must lie strictly between 0 and 1",
                self.validation_fraction
            );
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            bail!(Config, "learning rate {} must be finite and nonnegative", self.learning_rate);
        }
        let [lo, hi] = self.branch_dropout;
        if !(0.0..1.0).contains(&lo) || !(lo..1.0).contains(&hi) {
            bail!(Config, "branch dropout range [{lo}, {hi}] must satisfy 0 ≤ lo ≤ hi < 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Embedding table; relative paths resolve against the manifest's directory.
    pub embeddings: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            embeddings: PathBuf::from("embeddings.bin"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub hidden: usize,
    pub embedding_width: usize,
    pub utterances: usize,
    /// Coordinates probed per parameter tensor in the full-model check.
    pub coordinates: usize,
    /// Finite-difference steps tried in order, largest first.
    pub steps: Vec<f64>,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            trials: 100,
            hidden: 8,
            embedding_width: 8,
            utterances: 3,
            coordinates: 2,
            steps: vec![1e-3, 1e-4, 1e-5, 1e-6],
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub audio: AudioBranchConfig,
    pub text: TextBranchConfig,
    pub fusion: FusionConfig,
    pub data: DataConfig,
    pub gradcheck: GradCheckConfig,
}

impl RunConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            audio: self.audio.clone(),
            text: self.text.clone(),
            fusion: self.fusion.clone(),
        }
    }

    /// Narrow layers and short schedules for desk-scale corpora.
    pub fn small() -> Self {
        let mut c = RunConfig::default();
        c.train.epochs = 60;
        c.train.branch_epochs = 60;
        c.train.finetune_epochs = 2;
        c.train.branch_loss = LossKind::CrossEntropy;
        c.train.branch_dropout = [0.5, 0.5];
        c.audio.lstm_hidden = 16;
        c.audio.asv_width = 16;
        c.audio.conv.kernel_sizes = vec![3, 5];
        c.audio.conv.channels = 8;
        c.text.lstm_hidden = 16;
        c.text.tsv_width = 16;
        c.text.conv.kernel_sizes = vec![3, 5];
        c.text.conv.channels = 8;
        c.text.conv.batch_norm = true;
        c.fusion.context_hidden = 16;
        c.fusion.shared_width = 16;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model().validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.train.branch_batch_size, 16);
        assert_eq!(c.train.epochs, 50);
        assert_eq!(c.train.runs, 3);
        assert_eq!(c.audio.lstm_hidden, 200);
        assert_eq!(c.audio.conv.kernel_sizes, vec![3, 5, 7, 9]);
    }

    #[test]
    fn partial_file_and_unknown_keys() {
        let c = RunConfig::from_toml("[train]\nepochs = 3\n[audio]\nkinds = [\"mfcc\", \"rmse\"]\n[audio.conv]\nchannels = 4\n").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.audio.conv.channels, 4);
        assert_eq!(c.audio.lstm_input_width(), 14);
        let err = RunConfig::from_toml("[train]\nepoch = 3\n").unwrap_err();
        assert_eq!(err.kind(), "config");
        assert!(err.to_string().contains("epoch"));
        assert_eq!(RunConfig::from_toml("[bogus]\n").unwrap_err().kind(), "config");
        assert_eq!(RunConfig::from_toml("[train]\nbatch_size = 0\n").unwrap_err().kind(), "config");
    }

    #[test]
    fn partial_text_conv_keeps_text_defaults() {
        let c = RunConfig::from_toml("[text.conv]\nchannels = 4\n").unwrap();
        assert_eq!(c.text.conv.channels, 4);
        assert!(!c.text.conv.batch_norm);
        assert!(c.audio.conv.batch_norm);
        let bad = RunConfig::from_toml("[text.conv]\nchanels = 4\n").unwrap_err();
        assert_eq!(bad.kind(), "config");
    }

    #[test]
    fn checked_in_configs_match_presets() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for (file, preset) in [("small.toml", RunConfig::small()), ("default.toml", RunConfig::default())] {
            let text = fs::read_to_string(root.join(file)).unwrap();
            assert_eq!(text, preset.to_toml(), "{file} is stale; regenerate with the run_config example");
            assert_eq!(RunConfig::from_toml(&text).unwrap(), preset);
        }
    }
}
