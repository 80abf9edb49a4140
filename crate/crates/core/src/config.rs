//! Layered plain-text configuration: one file with `[corpus]`, `[model]`,
//! `[train]`, `[eval]` and `[matrix]` sections. Every default named across
//! the crate is overridable here; unknown keys are rejected.

use std::path::Path;

use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::eval::matrix::MatrixConfig;
use crate::eval::EvalConfig;
use crate::model::{ModelConfig, TrainingMode};
use crate::train::TrainConfig;

/// `[train]` section: optimizer and schedule settings plus the branch
/// flags; the model itself comes from `[model]`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub vq: bool,
    pub adversarial: bool,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub include_aux: Option<bool>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            vq: false,
            adversarial: false,
            learning_rate: t.learning_rate,
            lr_decay: t.lr_decay,
            grad_clip_norm: t.grad_clip_norm,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            log_every: t.log_every,
            include_aux: None,
        }
    }
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub matrix: MatrixConfig,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ConfigFile = toml::from_str(text)
            .map_err(|e| Error::config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        self.to_train_config().validate()?;
        Ok(())
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: TrainingMode {
                vq: self.train.vq,
                adversarial: self.train.adversarial,
            },
            model: self.model.clone(),
            learning_rate: self.train.learning_rate,
            lr_decay: self.train.lr_decay,
            grad_clip_norm: self.train.grad_clip_norm,
            batch_size: self.train.batch_size,
            max_steps: self.train.max_steps,
            seed: self.train.seed,
            checkpoint_every: self.train.checkpoint_every,
            log_every: self.train.log_every,
            include_aux: self.train.include_aux,
        }
    }

    /// Serialized effective configuration, echoed into output directories.
    pub fn echo(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("config echo: {e}")))
    }
}
