use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::lexicon::LexiconKind;
use crate::modules::ModuleConfig;
use crate::numerics::AdamConfig;
use crate::seq::{DecoderConfig, InferenceConfig};

/// Network sizes of the full model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub modules: ModuleConfig,
    pub decoder: DecoderConfig,
    pub inference: InferenceConfig,
    /// Channels of the series encoder used with direct conditioning.
    pub direct_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            modules: ModuleConfig::default(),
            decoder: DecoderConfig::default(),
            inference: InferenceConfig::default(),
            direct_channels: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    /// The decoder also sees a convolutional encoding of the series.
    pub direct_conditioning: bool,
    /// Optimise the marginal likelihood directly, without an inference network.
    pub no_inference_net: bool,
    /// Drop the keyword auxiliary loss.
    pub no_heuristic: bool,
}

/// Step size that reaches a usable model on the synthetic corpus within the
/// default epoch budget.
pub const DEFAULT_LR: f32 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Prior temperatures to try; the best by dev Bleu-4 is kept.
    pub lambdas: Vec<f32>,
    pub w_aux: f32,
    pub ablations: Ablations,
    pub lexicon: LexiconKind,
    /// Epochs without dev Bleu-4 improvement before stopping.
    pub patience: usize,
    /// Dev captions checked against the variational identities each epoch.
    pub probe_size: usize,
    pub seed: u64,
    pub exec: Exec,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig {
                lr: DEFAULT_LR,
                ..AdamConfig::default()
            },
            lambdas: vec![10.0, 20.0],
            w_aux: 1.0,
            ablations: Ablations::default(),
            lexicon: LexiconKind::Synth,
            patience: 10,
            probe_size: 16,
            seed: 0,
            exec: Exec::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Weight of the auxiliary loss after ablations.
    pub fn effective_w_aux(&self) -> f32 {
        if self.ablations.no_heuristic || self.ablations.no_inference_net {
            0.0
        } else {
            self.w_aux
        }
    }
}
