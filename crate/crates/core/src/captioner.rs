//! Common interface over every captioning system.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::Result;

/// One generated caption. `program` and `score` are only set by systems that
/// choose a program before decoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionOutput {
    pub ids: Vec<usize>,
    pub text: String,
    pub program: Option<usize>,
    pub score: Option<f32>,
}

pub trait Captioner: Sync {
    fn name(&self) -> String;

    fn vocab(&self) -> &Vocabulary;

    /// Greedy caption.
    fn caption(&self, x: &[f32]) -> Result<CaptionOutput>;

    /// One stochastic caption at nucleus mass `top_p`.
    fn sample(&self, x: &[f32], top_p: f32, rng: &mut ChaCha8Rng) -> Result<CaptionOutput>;

    /// `log p(caption | x)`, or `None` for systems without a likelihood.
    fn loglik(&self, x: &[f32], ids: &[usize]) -> Result<Option<f64>>;

    /// Makes `x` acceptable as input, e.g. subsampling for fixed-width systems.
    fn adapt(&self, x: &[f32]) -> Vec<f32> {
        x.to_vec()
    }
}
