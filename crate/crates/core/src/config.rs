//! Experiment configuration file: one JSON object with `data`, `augment`,
//! `model`, `train`, `split` and `synth` sections. Missing sections and
//! fields take their defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::{BioBounds, DEFAULT_TRAIN_STRIDE, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synth::SynthConfig;
use crate::train::{SplitSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub window: usize,
    pub train_stride: usize,
    pub bio_bounds: BioBounds,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            train_stride: DEFAULT_TRAIN_STRIDE,
            bio_bounds: BioBounds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: Option<SplitSpec>,
    pub synth: SynthConfig,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.window != self.model.window {
            return Err(Error::config(format!(
                "data.window {} differs from model.window {}",
                self.data.window, self.model.window
            )));
        }
        if self.data.train_stride == 0 {
            return Err(Error::config("data.train_stride must be at least 1"));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate(self.data.window)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trips_and_rejects_unknown_sections() {
        let cfg = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<ExperimentConfig>("{\"bogus\": 1}").is_err());
    }

    #[test]
    fn mismatched_window_is_config_error() {
        let mut cfg = ExperimentConfig::default();
        cfg.data.window = 10;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
