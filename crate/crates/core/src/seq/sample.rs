use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Nucleus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub mode: DecodeMode,
    pub top_p: f32,
    pub temperature: f32,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self::greedy()
    }
}

impl SampleConfig {
    pub fn greedy() -> Self {
        Self {
            mode: DecodeMode::Greedy,
            top_p: 1.0,
            temperature: 1.0,
            seed: 0,
        }
    }

    pub fn nucleus(top_p: f32, seed: u64) -> Self {
        Self {
            mode: DecodeMode::Nucleus,
            top_p,
            temperature: 1.0,
            seed,
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// The smallest set of highest-probability indices whose mass reaches `top_p`,
/// renormalised. Ties in probability keep index order.
pub fn nucleus(probs: &[f32], top_p: f32) -> Vec<(usize, f32)> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut kept = Vec::new();
    let mut mass = 0.0f64;
    for i in order {
        if probs[i] <= 0.0 && !kept.is_empty() {
            break;
        }
        kept.push((i, probs[i]));
        mass += probs[i] as f64;
        if mass >= top_p as f64 {
            break;
        }
    }
    kept.into_iter()
        .map(|(i, p)| (i, (p as f64 / mass) as f32))
        .collect()
}

/// Draws an index from `(index, probability)` pairs.
pub fn sample_index<R: Rng>(dist: &[(usize, f32)], rng: &mut R) -> usize {
    let total: f64 = dist.iter().map(|d| d.1 as f64).sum();
    let mut u = rng.gen::<f64>() * total;
    for &(i, p) in dist {
        u -= p as f64;
        if u < 0.0 {
            return i;
        }
    }
    dist.last().map_or(0, |d| d.0)
}
