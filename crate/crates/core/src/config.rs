//! The single JSON run configuration. Every field has a default, so an
//! empty object `{}` is a complete configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, SplitRatios};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::ModelConfig;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 5,
            min_lr: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopConfig {
    pub patience: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self { patience: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub optimizer: OptimizerConfig,
    pub scheduler: SchedulerConfig,
    pub early_stopping: EarlyStopConfig,
    pub loss: LossConfig,
    pub split: SplitRatios,
    pub batch_size: usize,
    pub epochs: usize,
    pub image_size: usize,
    pub threshold: f64,
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            augment: AugmentConfig::default(),
            optimizer: OptimizerConfig::default(),
            scheduler: SchedulerConfig::default(),
            early_stopping: EarlyStopConfig::default(),
            loss: LossConfig::default(),
            split: SplitRatios::default(),
            batch_size: 16,
            epochs: 200,
            image_size: 256,
            threshold: 0.5,
            seed: 0,
            data_dir: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Sets the run, model-init and augmentation seeds together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.model.seed = seed;
        self.augment.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.augment.validate()?;
        self.split.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.image_size == 0 || self.image_size % 16 != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of 16",
                self.image_size
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::Config("optimizer: need lr > 0, betas in [0, 1), eps > 0".into()));
        }
        let s = &self.scheduler;
        if !(s.factor > 0.0 && s.factor < 1.0 && s.min_lr >= 0.0) {
            return Err(Error::Config("scheduler: need factor in (0, 1) and min_lr >= 0".into()));
        }
        Ok(())
    }

    /// Hex digest of the configuration without its paths.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.data_dir = None;
        c.out_dir = None;
        Ok(rng::hex_digest(serde_json::to_string(&c)?.as_bytes()))
    }

    /// `<first 12 hex digits of the hash>-s<seed>`.
    pub fn run_name(&self) -> Result<String> {
        Ok(format!("{}-s{}", &self.hash()?[..12], self.seed))
    }
}
