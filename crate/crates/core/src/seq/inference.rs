use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::Lstm;
use crate::data::PAD;
use crate::error::{Error, Result};
use crate::numerics::{softmax_in_place, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub emb_dim: usize,
    /// Hidden width of each direction.
    pub hidden: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            emb_dim: 64,
            hidden: 64,
        }
    }
}

/// Bidirectional LSTM over a caption followed by a softmax over programs.
#[derive(Clone, Debug)]
pub struct InferenceNet {
    pub n_programs: usize,
    emb: ParamId,
    fwd: Lstm,
    bwd: Lstm,
    w_cls: ParamId,
    b_cls: ParamId,
}

impl InferenceNet {
    pub fn init<R: Rng>(
        config: &InferenceConfig,
        vocab_size: usize,
        n_programs: usize,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Self {
        let emb = store.add_uniform(format!("{prefix}emb"), &[vocab_size, config.emb_dim], 0.1, rng);
        let fwd = Lstm::init(store, &format!("{prefix}fwd."), &[("w_x", config.emb_dim)], config.hidden, rng);
        let bwd = Lstm::init(store, &format!("{prefix}bwd."), &[("w_x", config.emb_dim)], config.hidden, rng);
        let w_cls = store.add_uniform(format!("{prefix}w_cls"), &[2 * config.hidden, n_programs], 0.1, rng);
        let b_cls = store.add(format!("{prefix}b_cls"), Tensor::zeros(&[1, n_programs]));
        Self {
            n_programs,
            emb,
            fwd,
            bwd,
            w_cls,
            b_cls,
        }
    }

    pub fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: String| {
            store
                .id(&n)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{n}`")))
        };
        let w_cls = get(format!("{prefix}w_cls"))?;
        Ok(Self {
            n_programs: store.get(w_cls).cols(),
            emb: get(format!("{prefix}emb"))?,
            fwd: Lstm::bind(store, &format!("{prefix}fwd."), &["w_x"])?,
            bwd: Lstm::bind(store, &format!("{prefix}bwd."), &["w_x"])?,
            w_cls,
            b_cls: get(format!("{prefix}b_cls"))?,
        })
    }

    fn check(&self, store: &ParamStore, ids: &[usize]) -> Result<()> {
        let v = store.get(self.emb).rows();
        if ids.is_empty() {
            return Err(Error::invalid("empty caption"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary of {v}")));
        }
        Ok(())
    }

    /// `log q(z | ids)` as a `[1 x Z]` row.
    pub fn log_q_on_tape(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        self.check(tape.store(), ids)?;
        let table = tape.param(self.emb);
        let e = tape.embedding(table, ids);
        let run = |tape: &mut Tape, lstm: &Lstm, order: &mut dyn Iterator<Item = usize>| {
            let proj = lstm.project(tape, e, 0);
            let proj = lstm.with_bias(tape, proj);
            let mut state = None;
            for t in order {
                let row = tape.embedding(proj, &[t]);
                state = Some(lstm.step(tape, row, state));
            }
            state.unwrap().0
        };
        let hf = run(tape, &self.fwd, &mut (0..ids.len()));
        let hb = run(tape, &self.bwd, &mut (0..ids.len()).rev());
        let h = tape.concat_cols(&[hf, hb]);
        let logits = self.classify(tape, h);
        Ok(tape.log_softmax_rows(logits))
    }

    fn classify(&self, tape: &mut Tape, h: Var) -> Var {
        let w = tape.param(self.w_cls);
        let b = tape.param(self.b_cls);
        let l = tape.matmul(h, w);
        tape.add_row(l, b)
    }

    pub fn posterior(&self, store: &ParamStore, ids: &[usize]) -> Result<Vec<f32>> {
        let mut tape = Tape::new(store);
        let lq = self.log_q_on_tape(&mut tape, ids)?;
        Ok(tape.value(lq).data().iter().map(|v| v.exp()).collect())
    }

    /// Posteriors for several captions at once, padded to a common length and masked.
    pub fn posterior_batch(&self, store: &ParamStore, captions: &[&[usize]]) -> Result<Vec<Vec<f32>>> {
        for c in captions {
            self.check(store, c)?;
        }
        if captions.is_empty() {
            return Ok(Vec::new());
        }
        let b = captions.len();
        let max_len = captions.iter().map(|c| c.len()).max().unwrap();
        let mut tape = Tape::new(store);
        let table = tape.param(self.emb);
        let run = |tape: &mut Tape, lstm: &Lstm, order: &mut dyn Iterator<Item = usize>| {
            let hsz = lstm.hidden;
            let zeros = tape.constant(Tensor::zeros(&[b, hsz]));
            let (mut h, mut c) = (zeros, zeros);
            for t in order {
                let ids: Vec<usize> = captions.iter().map(|cap| cap.get(t).copied().unwrap_or(PAD)).collect();
                let mask: Vec<f32> = captions
                    .iter()
                    .flat_map(|cap| std::iter::repeat_n(if t < cap.len() { 1.0 } else { 0.0 }, hsz))
                    .collect();
                let keep: Vec<f32> = mask.iter().map(|m| 1.0 - m).collect();
                let e = tape.embedding(table, &ids);
                let p = lstm.project(tape, e, 0);
                let p = lstm.with_bias(tape, p);
                let (hn, cn) = lstm.step(tape, p, Some((h, c)));
                let m = tape.constant(Tensor::matrix(b, hsz, mask));
                let k = tape.constant(Tensor::matrix(b, hsz, keep));
                h = blend(tape, m, k, hn, h);
                c = blend(tape, m, k, cn, c);
            }
            h
        };
        let hf = run(&mut tape, &self.fwd, &mut (0..max_len));
        let hb = run(&mut tape, &self.bwd, &mut (0..max_len).rev());
        let h = tape.concat_cols(&[hf, hb]);
        let logits = self.classify(&mut tape, h);
        let lv = tape.value(logits);
        Ok((0..b)
            .map(|r| {
                let mut p = lv.row_slice(r).to_vec();
                softmax_in_place(&mut p);
                p
            })
            .collect())
    }

    pub fn num_params(&self, store: &ParamStore) -> usize {
        [self.emb, self.w_cls, self.b_cls]
            .iter()
            .map(|&id| store.get(id).numel())
            .sum::<usize>()
            + self.fwd.num_params(store)
            + self.bwd.num_params(store)
    }
}

fn blend(tape: &mut Tape, m: Var, k: Var, new: Var, old: Var) -> Var {
    let a = tape.mul(m, new);
    let b = tape.mul(k, old);
    tape.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BOS, EOS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore, InferenceNet) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = InferenceConfig { emb_dim: 6, hidden: 5 };
        let q = InferenceNet::init(&cfg, 15, 24, &mut store, "inf.", &mut rng);
        for v in store.get_mut(q.w_cls).data_mut() {
            *v *= 10.0;
        }
        (store, q)
    }

    #[test]
    fn posterior_is_a_distribution() {
        let (store, q) = setup();
        let p = q.posterior(&store, &[BOS, 5, 6, 7, EOS]).unwrap();
        assert_eq!(p.len(), 24);
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(q.posterior(&store, &[BOS, 99, EOS]).is_err());
    }

    #[test]
    fn padded_batch_matches_single() {
        let (store, q) = setup();
        let caps: [&[usize]; 3] = [&[BOS, 5, EOS], &[BOS, 9, 8, 7, 6, 12, EOS], &[BOS, 4, 4, EOS]];
        let batch = q.posterior_batch(&store, &caps).unwrap();
        for (c, pb) in caps.iter().zip(&batch) {
            let single = q.posterior(&store, c).unwrap();
            for (a, b) in single.iter().zip(pb) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }
}
