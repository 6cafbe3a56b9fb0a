use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::Lstm;
use super::sample::{argmax, nucleus, sample_index, DecodeMode, SampleConfig};
use crate::data::{BOS, EOS, MAX_CAPTION_IDS, PAD};
use crate::error::{Error, Result};
use crate::numerics::{softmax_in_place, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub emb_dim: usize,
    pub hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            emb_dim: 64,
            hidden: 64,
        }
    }
}

/// LSTM language model whose every step also sees a fixed conditioning vector.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub vocab_size: usize,
    pub cond_dim: usize,
    emb: ParamId,
    lstm: Lstm,
    w_out: ParamId,
    b_out: ParamId,
}

const INPUTS: [&str; 2] = ["w_tok", "w_cond"];

impl Decoder {
    pub fn init<R: Rng>(
        config: &DecoderConfig,
        vocab_size: usize,
        cond_dim: usize,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Self {
        let emb = store.add_uniform(format!("{prefix}emb"), &[vocab_size, config.emb_dim], 0.1, rng);
        let lstm = Lstm::init(
            store,
            &format!("{prefix}lstm."),
            &[(INPUTS[0], config.emb_dim), (INPUTS[1], cond_dim)],
            config.hidden,
            rng,
        );
        let w_out = store.add_uniform(format!("{prefix}w_out"), &[config.hidden, vocab_size], 0.1, rng);
        let b_out = store.add(format!("{prefix}b_out"), Tensor::zeros(&[1, vocab_size]));
        Self {
            vocab_size,
            cond_dim,
            emb,
            lstm,
            w_out,
            b_out,
        }
    }

    pub fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: String| {
            store
                .id(&n)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{n}`")))
        };
        let emb = get(format!("{prefix}emb"))?;
        let lstm = Lstm::bind(store, &format!("{prefix}lstm."), &INPUTS)?;
        Ok(Self {
            vocab_size: store.get(emb).rows(),
            cond_dim: store.get(lstm.w_in[1]).rows(),
            emb,
            lstm,
            w_out: get(format!("{prefix}w_out"))?,
            b_out: get(format!("{prefix}b_out"))?,
        })
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.len() < 2 || ids[0] != BOS || *ids.last().unwrap() != EOS {
            return Err(Error::invalid("caption must start with BOS and end with EOS"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// `log p(ids | cond_r)` for every row `r` of `cond` (`[R x C]`), as `[R x 1]`.
    pub fn logprob_rows(&self, tape: &mut Tape, cond: Var, ids: &[usize]) -> Result<Var> {
        self.check_ids(ids)?;
        let rows = tape.shape(cond)[0];
        let steps = ids.len() - 1;
        let cond_proj = self.lstm.project(tape, cond, 1);
        let cond_proj = self.lstm.with_bias(tape, cond_proj);
        let table = tape.param(self.emb);
        let tok = tape.embedding(table, &ids[..steps]);
        let tok_proj = self.lstm.project(tape, tok, 0);

        let mut state = None;
        let mut hs = Vec::with_capacity(steps);
        for s in 0..steps {
            let row = tape.embedding(tok_proj, &[s]);
            let gates_in = tape.add_row(cond_proj, row);
            let (h, c) = self.lstm.step(tape, gates_in, state);
            state = Some((h, c));
            hs.push(h);
        }
        let h_all = tape.concat_rows(&hs);
        let logp = self.output_logprobs(tape, h_all);
        let targets: Vec<usize> = ids[1..]
            .iter()
            .flat_map(|&t| std::iter::repeat_n(t, rows))
            .collect();
        let picked = tape.pick(logp, &targets);
        let grid = tape.reshape(picked, &[steps, rows]);
        let total = tape.sum_axis(grid, 0);
        Ok(tape.transpose(total))
    }

    fn output_logprobs(&self, tape: &mut Tape, h: Var) -> Var {
        let w = tape.param(self.w_out);
        let b = tape.param(self.b_out);
        let logits = tape.matmul(h, w);
        let logits = tape.add_row(logits, b);
        tape.log_softmax_rows(logits)
    }

    /// `log p(ids | cond)` for a single conditioning vector.
    pub fn caption_logprob(&self, store: &ParamStore, cond: &[f32], ids: &[usize]) -> Result<f32> {
        let mut tape = Tape::new(store);
        let c = tape.constant(Tensor::row(cond.to_vec()));
        let lp = self.logprob_rows(&mut tape, c, ids)?;
        Ok(tape.value(lp).item())
    }

    /// Next-token distributions after each prefix of `ids` (teacher forcing).
    pub fn step_distributions(&self, store: &ParamStore, cond: &[f32], ids: &[usize]) -> Result<Vec<Vec<f32>>> {
        self.check_ids(ids)?;
        let mut tape = Tape::new(store);
        let mut st = DecodeState::new(self, &mut tape, cond);
        let mut out = Vec::new();
        for &tok in &ids[..ids.len() - 1] {
            let lp = st.advance(self, &mut tape, tok);
            out.push(lp.iter().map(|v| v.exp()).collect());
        }
        Ok(out)
    }

    /// Generates a caption (BOS ... EOS, at most [`MAX_CAPTION_IDS`] ids).
    /// PAD and BOS are never emitted; EOS is forced at the length limit.
    pub fn decode<R: Rng>(&self, store: &ParamStore, cond: &[f32], cfg: &SampleConfig, rng: &mut R) -> Vec<usize> {
        let mut tape = Tape::new(store);
        let mut st = DecodeState::new(self, &mut tape, cond);
        let mut ids = vec![BOS];
        while ids.len() < MAX_CAPTION_IDS - 1 {
            let mut logits = st.advance(self, &mut tape, *ids.last().unwrap());
            logits[PAD] = f32::NEG_INFINITY;
            logits[BOS] = f32::NEG_INFINITY;
            let next = match cfg.mode {
                DecodeMode::Greedy => argmax(&logits),
                DecodeMode::Nucleus => {
                    let t = cfg.temperature.max(1e-6);
                    let mut p: Vec<f32> = logits.iter().map(|l| l / t).collect();
                    softmax_in_place(&mut p);
                    sample_index(&nucleus(&p, cfg.top_p), rng)
                }
            };
            ids.push(next);
            if next == EOS {
                return ids;
            }
        }
        ids.push(EOS);
        ids
    }

    pub fn num_params(&self, store: &ParamStore) -> usize {
        [self.emb, self.w_out, self.b_out]
            .iter()
            .map(|&id| store.get(id).numel())
            .sum::<usize>()
            + self.lstm.num_params(store)
    }
}

/// Incremental single-row decoding on a tape.
struct DecodeState {
    cond_proj: Var,
    state: Option<(Var, Var)>,
}

impl DecodeState {
    fn new(d: &Decoder, tape: &mut Tape, cond: &[f32]) -> Self {
        assert_eq!(cond.len(), d.cond_dim, "conditioning width mismatch");
        let c = tape.constant(Tensor::row(cond.to_vec()));
        let p = d.lstm.project(tape, c, 1);
        let cond_proj = d.lstm.with_bias(tape, p);
        Self {
            cond_proj,
            state: None,
        }
    }

    /// Feeds `token` and returns log-probabilities of the next token.
    fn advance(&mut self, d: &Decoder, tape: &mut Tape, token: usize) -> Vec<f32> {
        let table = tape.param(d.emb);
        let e = tape.embedding(table, &[token]);
        let tp = d.lstm.project(tape, e, 0);
        let gates_in = tape.add(self.cond_proj, tp);
        let (h, c) = d.lstm.step(tape, gates_in, self.state);
        self.state = Some((h, c));
        let lp = d.output_logprobs(tape, h);
        tape.value(lp).data().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (ParamStore, Decoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = DecoderConfig { emb_dim: 8, hidden: 8 };
        let d = Decoder::init(&cfg, 12, 5, &mut store, "dec.", &mut rng);
        // Spread the output layer so sampling has something to choose between.
        for v in store.get_mut(d.w_out).data_mut() {
            *v *= 20.0;
        }
        (store, d)
    }

    #[test]
    fn eos_only_caption_is_one_softmax_entry() {
        let (store, d) = setup(0);
        let cond = [0.3, -0.2, 0.1, 0.0, 0.5];
        let lp = d.caption_logprob(&store, &cond, &[BOS, EOS]).unwrap();
        let dist = d.step_distributions(&store, &cond, &[BOS, EOS]).unwrap();
        assert!((lp - dist[0][EOS].ln()).abs() < 1e-6);
    }

    #[test]
    fn logprob_nonpositive_and_rejects_bad_ids() {
        let (store, d) = setup(1);
        let cond = [0.0; 5];
        assert!(d.caption_logprob(&store, &cond, &[BOS, 5, 7, EOS]).unwrap() <= 0.0);
        assert!(d.caption_logprob(&store, &cond, &[BOS, 50, EOS]).is_err());
        assert!(d.caption_logprob(&store, &cond, &[5, EOS]).is_err());
    }

    #[test]
    fn batched_rows_match_single_rows() {
        let (store, d) = setup(2);
        let conds = [[0.1f32, 0.2, 0.3, 0.4, 0.5], [-0.5, 0.0, 0.9, 0.1, -0.3]];
        let ids = [BOS, 4, 9, 6, EOS];
        let mut tape = Tape::new(&store);
        let c = tape.constant(Tensor::matrix(2, 5, conds.concat()));
        let lp = d.logprob_rows(&mut tape, c, &ids).unwrap();
        for (r, cond) in conds.iter().enumerate() {
            let single = d.caption_logprob(&store, cond, &ids).unwrap();
            assert!((tape.value(lp).data()[r] - single).abs() < 1e-5);
        }
    }

    #[test]
    fn teacher_forced_steps_agree_with_logprob() {
        let (store, d) = setup(3);
        let cond = [0.2, 0.1, -0.1, 0.3, 0.0];
        let ids = [BOS, 4, 9, 6, EOS];
        let dist = d.step_distributions(&store, &cond, &ids).unwrap();
        let manual: f32 = dist.iter().zip(&ids[1..]).map(|(p, &t)| p[t].ln()).sum();
        let lp = d.caption_logprob(&store, &cond, &ids).unwrap();
        assert!((manual - lp).abs() < 1e-4);
        for p in dist {
            assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn greedy_is_deterministic_and_bounded() {
        let (store, d) = setup(4);
        let cond = [0.4, 0.4, -0.4, 0.1, 0.2];
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let a = d.decode(&store, &cond, &SampleConfig::greedy(), &mut r);
        let b = d.decode(&store, &cond, &SampleConfig::greedy(), &mut r);
        assert_eq!(a, b);
        assert!(a.len() <= MAX_CAPTION_IDS);
        assert_eq!(a[0], BOS);
        assert_eq!(*a.last().unwrap(), EOS);
        assert!(!a[1..].contains(&PAD) && !a[1..].contains(&BOS));
    }

    #[test]
    fn tiny_top_p_equals_greedy() {
        let (store, d) = setup(5);
        let cond = [0.1, -0.4, 0.2, 0.2, 0.7];
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let g = d.decode(&store, &cond, &SampleConfig::greedy(), &mut r);
        for s in 0..10 {
            let n = d.decode(&store, &cond, &SampleConfig::nucleus(1e-6, s), &mut r);
            assert_eq!(n, g);
        }
    }

    #[test]
    fn swapping_tokens_changes_logprob() {
        let (store, d) = setup(6);
        let cond = [0.3, 0.3, 0.3, -0.3, 0.0];
        let a = d.caption_logprob(&store, &cond, &[BOS, 4, 9, EOS]).unwrap();
        let b = d.caption_logprob(&store, &cond, &[BOS, 9, 4, EOS]).unwrap();
        assert_ne!(a, b);
    }
}
