//! TOML run configuration. Every field has a default; flags override the file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use truce::eval::{WordSource, DEFAULT_SAMPLES, DEFAULT_TOP_P};
use truce::trainer::{ModelConfig, TrainConfig};

use crate::UsageError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub baseline: BaselineSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n: usize,
    pub t: usize,
    /// 6 for every class, 4 for the seen compositions, 2 for the held-out ones.
    pub classes: usize,
    /// Windows to draw when ingesting price files.
    pub count: usize,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n: 720,
            t: 12,
            classes: 6,
            count: 1900,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    /// Encoder width; solved for parameter parity when absent.
    pub hidden: Option<usize>,
    pub w_cls: Vec<f32>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            hidden: None,
            w_cls: vec![1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub samples: usize,
    pub top_p: Vec<f32>,
    pub seed: u64,
    pub top_k: usize,
    pub source: WordSource,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            top_p: DEFAULT_TOP_P.to_vec(),
            seed: 0,
            top_k: 10,
            source: WordSource::Prior,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| UsageError(format!("bad config {}: {e}", path.display())))?;
        if cfg.train.model != ModelConfig::default() {
            return Err(UsageError("network sizes belong in [model], not [train.model]".into()).into());
        }
        Ok(cfg)
    }

    /// Training settings with the `[model]` section applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nepochz = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[nope]\n").is_err());
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let c: RunConfig = toml::from_str("[train]\nepochs = 3\n[model.modules]\nn_pattern = 7\n").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.train_config().model.modules.n_pattern, 7);
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
    }
}
