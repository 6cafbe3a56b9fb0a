use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

/// A single LSTM layer. The input may be split over several weight matrices
/// whose projections are summed, which lets callers precompute the parts that
/// do not change between steps. Gate order is input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub hidden: usize,
    pub w_in: Vec<ParamId>,
    pub w_hid: ParamId,
    pub bias: ParamId,
}

impl Lstm {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        inputs: &[(&str, usize)],
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_in = inputs
            .iter()
            .map(|(name, dim)| store.add_uniform(format!("{prefix}{name}"), &[*dim, 4 * hidden], 0.1, rng))
            .collect();
        let w_hid = store.add_uniform(format!("{prefix}w_hid"), &[hidden, 4 * hidden], 0.1, rng);
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        let bias = store.add(format!("{prefix}bias"), Tensor::row(b));
        Self {
            hidden,
            w_in,
            w_hid,
            bias,
        }
    }

    pub fn bind(store: &ParamStore, prefix: &str, inputs: &[&str]) -> Result<Self> {
        let get = |n: String| {
            store
                .id(&n)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{n}`")))
        };
        let w_hid = get(format!("{prefix}w_hid"))?;
        let hidden = store.get(w_hid).rows();
        Ok(Self {
            hidden,
            w_in: inputs
                .iter()
                .map(|n| get(format!("{prefix}{n}")))
                .collect::<Result<_>>()?,
            w_hid,
            bias: get(format!("{prefix}bias"))?,
        })
    }

    /// `x * w_in[k] + bias`, the per-step input projection for input part `k`.
    pub fn project(&self, tape: &mut Tape, x: Var, k: usize) -> Var {
        let w = tape.param(self.w_in[k]);
        tape.matmul(x, w)
    }

    /// Adds the bias row to a projection.
    pub fn with_bias(&self, tape: &mut Tape, proj: Var) -> Var {
        let b = tape.param(self.bias);
        tape.add_row(proj, b)
    }

    /// One step from the summed input projection `gates_in` (`[B x 4H]`, bias included).
    pub fn step(&self, tape: &mut Tape, gates_in: Var, state: Option<(Var, Var)>) -> (Var, Var) {
        let h4 = self.hidden;
        let gates = match state {
            Some((h, _)) => {
                let w = tape.param(self.w_hid);
                let rec = tape.matmul(h, w);
                tape.add(gates_in, rec)
            }
            None => gates_in,
        };
        let i = tape.slice_cols(gates, 0, h4);
        let f = tape.slice_cols(gates, h4, h4);
        let g = tape.slice_cols(gates, 2 * h4, h4);
        let o = tape.slice_cols(gates, 3 * h4, h4);
        let i = tape.sigmoid(i);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let ig = tape.mul(i, g);
        let c = match state {
            Some((_, c_prev)) => {
                let f = tape.sigmoid(f);
                let fc = tape.mul(f, c_prev);
                tape.add(fc, ig)
            }
            None => ig,
        };
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        (h, c)
    }

    pub fn num_params(&self, store: &ParamStore) -> usize {
        self.w_in
            .iter()
            .chain([&self.w_hid, &self.bias])
            .map(|&id| store.get(id).numel())
            .sum()
    }
}
