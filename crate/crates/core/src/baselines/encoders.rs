//! Series encoders producing a fixed-width conditioning vector.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modules::INPUT_SCALE;
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::seq::Lstm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Fc,
    Lstm,
    Conv,
    Fft,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] = [EncoderKind::Fc, EncoderKind::Lstm, EncoderKind::Conv, EncoderKind::Fft];

    /// Whether the encoder only accepts the series length it was built for.
    pub fn fixed_length(self) -> bool {
        matches!(self, EncoderKind::Fc | EncoderKind::Fft)
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Fc => "fc",
            EncoderKind::Lstm => "lstm",
            EncoderKind::Conv => "conv",
            EncoderKind::Fft => "fft",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc" => Ok(EncoderKind::Fc),
            "lstm" => Ok(EncoderKind::Lstm),
            "conv" => Ok(EncoderKind::Conv),
            "fft" => Ok(EncoderKind::Fft),
            _ => Err(Error::invalid(format!("unknown encoder `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Hidden width (MLP units, LSTM state and repeat width, or conv channels).
    pub hidden: usize,
    pub kernel_width: usize,
    /// Series length the encoder is built for.
    pub series_len: usize,
    pub out_dim: usize,
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind, hidden: usize, series_len: usize, out_dim: usize) -> Self {
        Self {
            kind,
            hidden,
            kernel_width: 5,
            series_len,
            out_dim,
        }
    }

    /// Input width of the first layer for the fixed-length encoders.
    fn input_dim(&self) -> usize {
        match self.kind {
            EncoderKind::Fft => fft_feature_len(self.series_len),
            _ => self.series_len,
        }
    }
}

#[derive(Clone, Debug)]
enum Layers {
    Mlp { w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId },
    Lstm { lstm: Lstm, w_o: ParamId, b_o: ParamId },
    Conv { k1: ParamId, b1: ParamId, k2: ParamId, b2: ParamId, w_o: ParamId, b_o: ParamId },
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    layers: Layers,
}

impl Encoder {
    pub fn init<R: Rng>(config: EncoderConfig, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<Self> {
        let (h, d, w) = (config.hidden, config.out_dim, config.kernel_width);
        if h == 0 || d == 0 || w % 2 == 0 || config.series_len == 0 {
            return Err(Error::invalid(format!("bad encoder config {config:?}")));
        }
        let mut u = |name: &str, shape: &[usize]| store_uniform(store, prefix, name, shape, rng);
        let layers = match config.kind {
            EncoderKind::Fc | EncoderKind::Fft => {
                let i = config.input_dim();
                Layers::Mlp {
                    w1: u("w1", &[i, h]),
                    b1: u("b1", &[1, h]),
                    w2: u("w2", &[h, d]),
                    b2: u("b2", &[1, d]),
                }
            }
            EncoderKind::Conv => Layers::Conv {
                k1: u("k1", &[h, 1, w]),
                b1: u("b1", &[1, h]),
                k2: u("k2", &[h, h, w]),
                b2: u("b2", &[1, h]),
                w_o: u("w_o", &[h, d]),
                b_o: u("b_o", &[1, d]),
            },
            EncoderKind::Lstm => {
                let lstm = Lstm::init(store, &format!("{prefix}lstm."), &[("w_x", h)], h, rng);
                Layers::Lstm {
                    lstm,
                    w_o: store_uniform(store, prefix, "w_o", &[h, d], rng),
                    b_o: store_uniform(store, prefix, "b_o", &[1, d], rng),
                }
            }
        };
        Ok(Self { config, layers })
    }

    pub fn bind(config: EncoderConfig, store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: &str| {
            store
                .id(&format!("{prefix}{n}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{prefix}{n}`")))
        };
        let layers = match config.kind {
            EncoderKind::Fc | EncoderKind::Fft => Layers::Mlp {
                w1: get("w1")?,
                b1: get("b1")?,
                w2: get("w2")?,
                b2: get("b2")?,
            },
            EncoderKind::Conv => Layers::Conv {
                k1: get("k1")?,
                b1: get("b1")?,
                k2: get("k2")?,
                b2: get("b2")?,
                w_o: get("w_o")?,
                b_o: get("b_o")?,
            },
            EncoderKind::Lstm => Layers::Lstm {
                lstm: Lstm::bind(store, &format!("{prefix}lstm."), &["w_x"])?,
                w_o: get("w_o")?,
                b_o: get("b_o")?,
            },
        };
        Ok(Self { config, layers })
    }

    pub fn check_len(&self, t: usize) -> Result<()> {
        if self.config.kind.fixed_length() && t != self.config.series_len {
            return Err(Error::invalid(format!(
                "{} encoder expects length {}, got {t}",
                self.config.kind, self.config.series_len
            )));
        }
        if self.config.kind == EncoderKind::Conv && t < self.config.kernel_width {
            return Err(Error::invalid(format!("series length {t} shorter than the kernel")));
        }
        if t == 0 {
            return Err(Error::invalid("empty series"));
        }
        Ok(())
    }

    /// Encoding of `x` as a `[1 x out_dim]` row.
    pub fn encode_on_tape(&self, tape: &mut Tape, x: &[f32]) -> Result<Var> {
        self.check_len(x.len())?;
        let scaled: Vec<f32> = x.iter().map(|v| v / INPUT_SCALE).collect();
        Ok(match &self.layers {
            Layers::Mlp { w1, b1, w2, b2 } => {
                let feats = match self.config.kind {
                    EncoderKind::Fft => fft_features(&scaled),
                    _ => scaled,
                };
                let n = feats.len();
                let input = tape.constant(Tensor::matrix(1, n, feats));
                let h = affine(tape, input, *w1, *b1);
                let h = tape.relu(h);
                affine(tape, h, *w2, *b2)
            }
            Layers::Conv { k1, b1, k2, b2, w_o, b_o } => {
                let input = tape.constant(Tensor::matrix(1, scaled.len(), scaled));
                let (k1, b1, k2, b2) = (tape.param(*k1), tape.param(*b1), tape.param(*k2), tape.param(*b2));
                let h = tape.conv1d(input, k1, b1);
                let h = tape.relu(h);
                let h = tape.conv1d(h, k2, b2);
                let h = tape.relu(h);
                let pooled = tape.mean_axis(h, 1);
                let pooled = tape.transpose(pooled);
                affine(tape, pooled, *w_o, *b_o)
            }
            Layers::Lstm { lstm, w_o, b_o } => {
                let h = lstm.hidden;
                // Step t sees the value x_t repeated across the whole input width.
                let repeated: Vec<f32> = scaled.iter().flat_map(|&v| std::iter::repeat_n(v, h)).collect();
                let input = tape.constant(Tensor::matrix(scaled.len(), h, repeated));
                let proj = lstm.project(tape, input, 0);
                let proj = lstm.with_bias(tape, proj);
                let mut state = None;
                for t in 0..scaled.len() {
                    let row = tape.embedding(proj, &[t]);
                    state = Some(lstm.step(tape, row, state));
                }
                affine(tape, state.unwrap().0, *w_o, *b_o)
            }
        })
    }

    pub fn encode(&self, store: &ParamStore, x: &[f32]) -> Result<Vec<f32>> {
        let mut tape = Tape::new(store);
        let v = self.encode_on_tape(&mut tape, x)?;
        Ok(tape.value(v).data().to_vec())
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match &self.layers {
            Layers::Mlp { w1, b1, w2, b2 } => vec![*w1, *b1, *w2, *b2],
            Layers::Conv { k1, b1, k2, b2, w_o, b_o } => vec![*k1, *b1, *k2, *b2, *w_o, *b_o],
            Layers::Lstm { lstm, w_o, b_o } => {
                let mut v = lstm.w_in.clone();
                v.extend([lstm.w_hid, lstm.bias, *w_o, *b_o]);
                v
            }
        }
    }

    pub fn num_params(&self, store: &ParamStore) -> usize {
        self.param_ids().iter().map(|&id| store.get(id).numel()).sum()
    }
}

fn store_uniform<R: Rng>(store: &mut ParamStore, prefix: &str, name: &str, shape: &[usize], rng: &mut R) -> ParamId {
    store.add_uniform(format!("{prefix}{name}"), shape, 0.1, rng)
}

fn affine(tape: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Var {
    let w = tape.param(w);
    let b = tape.param(b);
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

pub fn fft_feature_len(t: usize) -> usize {
    2 * (t / 2 + 1)
}

/// Real then imaginary parts of the non-negative-frequency DFT bins.
pub fn fft_features(x: &[f32]) -> Vec<f32> {
    let n = x.len();
    let mut buf: Vec<Complex<f32>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2 + 1;
    buf[..half]
        .iter()
        .map(|c| c.re)
        .chain(buf[..half].iter().map(|c| c.im))
        .collect()
}

/// Every other value, starting from the first.
pub fn subsample_alternate(x: &[f32]) -> Vec<f32> {
    x.iter().step_by(2).copied().collect()
}

/// Makes `x` acceptable to an encoder built for `train_len`: a series of
/// exactly twice that length is reduced to its alternate values.
pub fn adapt_length(x: &[f32], train_len: usize) -> Vec<f32> {
    if x.len() == 2 * train_len {
        subsample_alternate(x)
    } else {
        x.to_vec()
    }
}
