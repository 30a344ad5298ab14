//! Run configuration file: a JSON stand-in for the shell-variable blocks of
//! the original scripts. Every field has a desk-scale default, so a partial
//! (or absent) file works.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::DecodeConfig;
use crate::model::ModelConfig;
use crate::text::FeaturizeConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Encoder shape without the data-dependent fields (vocabulary size comes
/// from the built vocabulary, max positions from the featurizer).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            num_layers: 4,
            num_heads: 4,
            d_model: 128,
            d_ff: 512,
        }
    }
}

impl ModelShape {
    pub fn into_model_config(self, vocab_size: usize, max_positions: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            vocab_size,
            max_positions,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelShape,
    pub featurize: FeaturizeConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    /// Seeds to train; one checkpoint per seed.
    pub seeds: Vec<u64>,
    pub use_f1: bool,
    pub vocab_size: usize,
    /// Keep corpus casing instead of lowercasing when building the vocabulary.
    pub cased: bool,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelShape::default(),
            featurize: FeaturizeConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            seeds: vec![42],
            use_f1: false,
            vocab_size: 8192,
            cased: false,
            workers: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seed list must be non-empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_desk_scale() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.model.num_layers, 4);
        assert_eq!(cfg.featurize.max_seq_length, 128);
        assert_eq!(cfg.train.learning_rate, 3e-5);
        assert_eq!(cfg.seeds, vec![42]);
    }

    #[test]
    fn partial_json_fills_in_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"model": {"num_layers": 12}, "seeds": [1, 2, 3]}"#).unwrap();
        assert_eq!(cfg.model.num_layers, 12);
        assert_eq!(cfg.model.d_model, 128);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn empty_seed_list_is_invalid() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seeds": []}"#).unwrap();
        assert!(cfg.validate().is_err());
    }
}
