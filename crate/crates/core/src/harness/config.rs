//! Training configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::config::ModelConfig;
use crate::diffusion::Schedule;
use crate::error::{config_err, Error, Result};
use crate::harness::data::SyntheticVideoSpec;
use crate::harness::optim::AdamWConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub blobs: usize,
    pub speed: (f64, f64),
    pub radius: (f64, f64),
    pub edge: f64,
    pub train_clips: usize,
    pub val_clips: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SyntheticVideoSpec::default();
        Self {
            blobs: s.blobs,
            speed: s.speed,
            radius: s.radius,
            edge: s.edge,
            train_clips: 512,
            val_clips: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub ema_decay: f64,
    pub hflip: bool,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Steps between validation passes; 0 validates only at the end.
    pub val_every: usize,
    pub val_batch: usize,
    pub model: ModelConfig,
    pub optim: AdamWConfig,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 2000,
            batch_size: 4,
            ema_decay: crate::diffusion::DEFAULT_EMA_DECAY,
            hflip: true,
            checkpoint_every: 500,
            val_every: 0,
            val_batch: 16,
            model: ModelConfig::toy(),
            optim: AdamWConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.optim.lr.is_nan() || self.optim.lr <= 0.0 {
            return config_err("learning rate must be positive");
        }
        if self.steps == 0 || self.batch_size == 0 || self.val_batch == 0 {
            return config_err("steps, batch_size and val_batch must be positive");
        }
        if self.data.train_clips == 0 || self.data.val_clips == 0 {
            return config_err("datasets must be non-empty");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return config_err("ema_decay must lie in [0, 1)");
        }
        self.video_spec(0).validate()
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::scaled(self.model.t_max)
    }

    pub fn video_spec(&self, seed: u64) -> SyntheticVideoSpec {
        SyntheticVideoSpec {
            frames: self.model.frames,
            channels: self.model.channels,
            height: self.model.height,
            width: self.model.width,
            blobs: self.data.blobs,
            speed: self.data.speed,
            radius: self.data.radius,
            edge: self.data.edge,
            seed,
        }
    }
}
