use log::debug;
use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of one store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update. Parameters with no gradient are updated as if the
    /// gradient were zero, so their moments still decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        assert_eq!(self.first.len(), store.len(), "adam state built for another store");
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            let grad = grads.raw(id);
            if grad.is_none() {
                debug!("adam: no gradient for `{}`, treating as zero", store.name(id));
            }
            let param = store.get_mut(id);
            if let Some(g) = grad {
                assert_eq!(g.shape(), param.shape(), "gradient shape for `{i}`");
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = param.data_mut();
            for k in 0..p.len() {
                let gk = grad.map_or(0.0, |g| g.data()[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
