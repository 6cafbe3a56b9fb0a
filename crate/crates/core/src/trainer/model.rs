use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::objective::{log_normalize, marginal_loglik_from, PairStats};
use crate::baselines::{Encoder, EncoderConfig, EncoderKind};
use crate::captioner::{CaptionOutput, Captioner};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::lexicon::LexiconKind;
use crate::modules::ProgramSpace;
use crate::numerics::{ParamStore, Tape, Tensor, Var};
use crate::seq::{argmax, nucleus, sample_index, Decoder, InferenceNet, SampleConfig};

pub(crate) const PROG: &str = "prog.";
pub(crate) const DEC: &str = "dec.";
pub(crate) const INF: &str = "inf.";
pub(crate) const DENC: &str = "denc.";

/// Programs, decoder and inference network over one parameter store.
#[derive(Clone, Debug)]
pub struct TruceModel {
    pub config: ModelConfig,
    /// Decoder also conditions on a convolutional encoding of the series.
    pub direct: bool,
    pub lexicon: LexiconKind,
    /// Whether keyword anchoring was used in training, which fixes module identities.
    pub anchored: bool,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub space: ProgramSpace,
    pub decoder: Decoder,
    pub inference: InferenceNet,
    pub direct_encoder: Option<Encoder>,
    /// Training-only settings.
    pub(crate) w_aux: f32,
    pub(crate) no_inference_net: bool,
}

/// Tape nodes for one (series, caption) pair.
pub(crate) struct PairVars {
    /// `[1 x Z]`
    pub log_prior: Var,
    /// `log p(y | z)` per program, `[1 x Z]`
    pub rec: Var,
    /// `[1 x Z]`, absent when the inference network is not used.
    pub log_q: Option<Var>,
}

impl TruceModel {
    pub fn new<R: Rng>(
        config: ModelConfig,
        direct: bool,
        lexicon: LexiconKind,
        anchored: bool,
        vocab: Vocabulary,
        rng: &mut R,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let space = ProgramSpace::init(config.modules.clone(), &mut store, PROG, rng)?;
        let z = space.n_programs();
        let pdim = config.modules.program_dim();
        let direct_encoder = if direct {
            let ec = EncoderConfig::new(EncoderKind::Conv, config.direct_channels, 1, pdim);
            Some(Encoder::init(ec, &mut store, DENC, rng)?)
        } else {
            None
        };
        let cond_dim = if direct { 2 * pdim } else { pdim };
        let decoder = Decoder::init(&config.decoder, vocab.len(), cond_dim, &mut store, DEC, rng);
        let inference = InferenceNet::init(&config.inference, vocab.len(), z, &mut store, INF, rng);
        Ok(Self {
            config,
            direct,
            lexicon,
            anchored,
            vocab,
            store,
            space,
            decoder,
            inference,
            direct_encoder,
            w_aux: 0.0,
            no_inference_net: false,
        })
    }

    /// Rebinds handles to a store loaded from disk.
    pub fn from_store(
        config: ModelConfig,
        direct: bool,
        lexicon: LexiconKind,
        anchored: bool,
        vocab: Vocabulary,
        store: ParamStore,
    ) -> Result<Self> {
        let space = ProgramSpace::bind(config.modules.clone(), &store, PROG)?;
        let decoder = Decoder::bind(&store, DEC)?;
        let inference = InferenceNet::bind(&store, INF)?;
        let pdim = config.modules.program_dim();
        let direct_encoder = if direct {
            let ec = EncoderConfig::new(EncoderKind::Conv, config.direct_channels, 1, pdim);
            Some(Encoder::bind(ec, &store, DENC)?)
        } else {
            None
        };
        if decoder.vocab_size != vocab.len() {
            return Err(Error::VocabMismatch(format!(
                "decoder has {} tokens, vocabulary {}",
                decoder.vocab_size,
                vocab.len()
            )));
        }
        Ok(Self {
            config,
            direct,
            lexicon,
            anchored,
            vocab,
            store,
            space,
            decoder,
            inference,
            direct_encoder,
            w_aux: 0.0,
            no_inference_net: false,
        })
    }

    pub fn n_programs(&self) -> usize {
        self.space.n_programs()
    }

    /// Decoder conditioning rows for every program, `[Z x C]`.
    pub(crate) fn cond_on_tape(&self, tape: &mut Tape, x: &[f32]) -> Result<Var> {
        let emb = self.space.embeddings_on_tape(tape);
        match &self.direct_encoder {
            None => Ok(emb),
            Some(enc) => {
                let e = enc.encode_on_tape(tape, x)?;
                let ones = tape.constant(Tensor::full(&[self.n_programs(), 1], 1.0));
                let tiled = tape.matmul(ones, e);
                Ok(tape.concat_cols(&[emb, tiled]))
            }
        }
    }

    pub(crate) fn pair_vars(&self, tape: &mut Tape, x: &[f32], ids: &[usize], with_q: bool) -> Result<PairVars> {
        let scores = self.space.scores_on_tape(tape, x);
        let log_prior = self.space.log_prior_on_tape(tape, scores);
        let cond = self.cond_on_tape(tape, x)?;
        let rec_col = self.decoder.logprob_rows(tape, cond, ids)?;
        let rec = tape.transpose(rec_col);
        let log_q = if with_q {
            Some(self.inference.log_q_on_tape(tape, ids)?)
        } else {
            None
        };
        Ok(PairVars { log_prior, rec, log_q })
    }

    /// Prior, per-program reconstruction and posterior values for one pair.
    pub fn pair_stats(&self, x: &[f32], ids: &[usize]) -> Result<PairStats> {
        let mut tape = Tape::new(&self.store);
        let v = self.pair_vars(&mut tape, x, ids, true)?;
        let get = |var: Var| tape.value(var).data().iter().map(|&f| f as f64).collect::<Vec<f64>>();
        Ok(PairStats {
            log_prior: log_normalize(&get(v.log_prior)),
            rec: get(v.rec),
            log_q: log_normalize(&get(v.log_q.unwrap())),
        })
    }

    pub fn scores(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.space.scores(&self.store, x)
    }

    pub fn prior(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.space.prior(&self.store, x)
    }

    pub fn posterior(&self, ids: &[usize]) -> Result<Vec<f32>> {
        self.inference.posterior(&self.store, ids)
    }

    /// Conditioning vector for one program.
    pub fn program_cond(&self, x: &[f32], z: usize) -> Result<Vec<f32>> {
        let mut c = self.space.program_embedding(&self.store, z)?;
        if let Some(enc) = &self.direct_encoder {
            c.extend(enc.encode(&self.store, x)?);
        }
        Ok(c)
    }

    /// Greedy caption for a given program.
    pub fn caption_program(&self, x: &[f32], z: usize) -> Result<CaptionOutput> {
        let cond = self.program_cond(x, z)?;
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let ids = self.decoder.decode(&self.store, &cond, &SampleConfig::greedy(), &mut rng);
        let scores = self.scores(x)?;
        Ok(CaptionOutput {
            text: self.vocab.decode(&ids),
            ids,
            program: Some(z),
            score: Some(scores[z]),
        })
    }

    pub fn marginal_loglik(&self, x: &[f32], ids: &[usize]) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let v = self.pair_vars(&mut tape, x, ids, false)?;
        let lp: Vec<f64> = tape.value(v.log_prior).data().iter().map(|&f| f as f64).collect();
        let rec: Vec<f64> = tape.value(v.rec).data().iter().map(|&f| f as f64).collect();
        Ok(marginal_loglik_from(&log_normalize(&lp), &rec))
    }

    /// Parameters used to caption: modules, decoder and the direct encoder.
    pub fn prediction_params(&self) -> usize {
        self.store.count_with_prefix(&[PROG, DEC, DENC])
    }
}

impl Captioner for TruceModel {
    fn name(&self) -> String {
        if self.direct { "truce-d" } else { "truce" }.to_string()
    }

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn caption(&self, x: &[f32]) -> Result<CaptionOutput> {
        let scores = self.scores(x)?;
        self.caption_program(x, argmax(&scores))
    }

    /// Samples the program from the prior's nucleus, then decodes greedily.
    fn sample(&self, x: &[f32], top_p: f32, rng: &mut ChaCha8Rng) -> Result<CaptionOutput> {
        let prior = self.prior(x)?;
        let z = sample_index(&nucleus(&prior, top_p), rng);
        self.caption_program(x, z)
    }

    fn loglik(&self, x: &[f32], ids: &[usize]) -> Result<Option<f64>> {
        self.marginal_loglik(x, ids).map(Some)
    }
}
