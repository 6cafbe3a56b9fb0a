use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoders::{adapt_length, Encoder, EncoderConfig, EncoderKind};
use crate::captioner::{CaptionOutput, Captioner};
use crate::data::{PairedDataset, Vocabulary};
use crate::error::{Error, Result};
use crate::lexicon::{HeuristicLexicon, LexiconKind};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor};
use crate::seq::{Decoder, DecoderConfig, SampleConfig};
use crate::trainer::{fit, EpochLog, Fit, LossReport, TrainConfig, TrainPair, TruceModel, DEC};

const ENC: &str = "enc.";
const CLS: &str = "cls.";

/// Allowed relative difference in prediction-time parameters against the full model.
pub const PARITY_TOLERANCE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub kind: EncoderKind,
    /// Encoder width; solved for parameter parity when absent.
    pub hidden: Option<usize>,
    /// Classification-loss weights to try; the best by dev Bleu-4 is kept.
    pub w_cls: Vec<f32>,
    /// Optimiser, schedule and decoder sizes shared with the full model.
    pub train: TrainConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Conv,
            hidden: None,
            w_cls: vec![1.0],
            train: TrainConfig::default(),
        }
    }
}

/// Encoder-decoder captioner with a classification head over programs.
#[derive(Clone, Debug)]
pub struct BaselineModel {
    pub lexicon: LexiconKind,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub n_programs: usize,
    pub n_locate: usize,
    pub w_cls: f32,
    w_head: ParamId,
    b_head: ParamId,
}

impl BaselineModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        encoder: EncoderConfig,
        decoder: &DecoderConfig,
        n_programs: usize,
        n_locate: usize,
        w_cls: f32,
        lexicon: LexiconKind,
        vocab: Vocabulary,
        rng: &mut R,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let d = encoder.out_dim;
        let encoder = Encoder::init(encoder, &mut store, ENC, rng)?;
        let decoder = Decoder::init(decoder, vocab.len(), d, &mut store, DEC, rng);
        let w_head = store.add_uniform(format!("{CLS}w"), &[d, n_programs], 0.1, rng);
        let b_head = store.add(format!("{CLS}b"), Tensor::zeros(&[1, n_programs]));
        Ok(Self {
            lexicon,
            vocab,
            store,
            encoder,
            decoder,
            n_programs,
            n_locate,
            w_cls,
            w_head,
            b_head,
        })
    }

    pub fn from_store(
        encoder: EncoderConfig,
        n_programs: usize,
        n_locate: usize,
        w_cls: f32,
        lexicon: LexiconKind,
        vocab: Vocabulary,
        store: ParamStore,
    ) -> Result<Self> {
        let encoder = Encoder::bind(encoder, &store, ENC)?;
        let decoder = Decoder::bind(&store, DEC)?;
        if decoder.vocab_size != vocab.len() {
            return Err(Error::VocabMismatch(format!(
                "decoder has {} tokens, vocabulary {}",
                decoder.vocab_size,
                vocab.len()
            )));
        }
        let get = |n: &str| {
            store
                .id(&format!("{CLS}{n}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{CLS}{n}`")))
        };
        let (w_head, b_head) = (get("w")?, get("b")?);
        Ok(Self {
            lexicon,
            vocab,
            encoder,
            decoder,
            n_programs,
            n_locate,
            w_cls,
            w_head,
            b_head,
            store,
        })
    }

    pub fn kind(&self) -> EncoderKind {
        self.encoder.config.kind
    }

    /// Parameters used to caption: encoder and decoder, not the classification head.
    pub fn prediction_params(&self) -> usize {
        self.store.count_with_prefix(&[ENC, DEC])
    }

    fn decode(&self, x: &[f32], cfg: &SampleConfig, rng: &mut ChaCha8Rng) -> Result<CaptionOutput> {
        let cond = self.encoder.encode(&self.store, x)?;
        let ids = self.decoder.decode(&self.store, &cond, cfg, rng);
        Ok(CaptionOutput {
            text: self.vocab.decode(&ids),
            ids,
            program: None,
            score: None,
        })
    }
}

impl Captioner for BaselineModel {
    fn name(&self) -> String {
        format!("{}enc", self.kind())
    }

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn caption(&self, x: &[f32]) -> Result<CaptionOutput> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.decode(x, &SampleConfig::greedy(), &mut rng)
    }

    /// Token-level nucleus sampling.
    fn sample(&self, x: &[f32], top_p: f32, rng: &mut ChaCha8Rng) -> Result<CaptionOutput> {
        self.decode(x, &SampleConfig::nucleus(top_p, 0), rng)
    }

    fn loglik(&self, x: &[f32], ids: &[usize]) -> Result<Option<f64>> {
        let cond = self.encoder.encode(&self.store, x)?;
        Ok(Some(self.decoder.caption_logprob(&self.store, &cond, ids)? as f64))
    }

    fn adapt(&self, x: &[f32]) -> Vec<f32> {
        if self.kind().fixed_length() {
            adapt_length(x, self.encoder.config.series_len)
        } else {
            x.to_vec()
        }
    }
}

impl Fit for BaselineModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn loss(&self, tape: &mut Tape, x: &[f32], pair: &TrainPair, aux_scale: f32) -> Result<LossReport> {
        let enc = self.encoder.encode_on_tape(tape, x)?;
        let rec = self.decoder.logprob_rows(tape, enc, &pair.ids)?;
        let loglik = tape.value(rec).item() as f64;
        let mut loss = tape.scale(rec, -1.0);
        let mut aux = 0.0;
        if let (Some(z), true) = (pair.label, self.w_cls > 0.0) {
            let w = tape.param(self.w_head);
            let b = tape.param(self.b_head);
            let logits = tape.matmul(enc, w);
            let logits = tape.add_row(logits, b);
            let lp = tape.log_softmax_rows(logits);
            let picked = tape.pick(lp, &[z]);
            aux = -tape.value(picked).item() as f64;
            let weighted = tape.scale(picked, -self.w_cls * aux_scale);
            loss = tape.add(loss, weighted);
        }
        let loss = tape.reshape(loss, &[1]);
        Ok(LossReport {
            loss,
            elbo: loglik,
            kl: 0.0,
            aux,
        })
    }

    fn label(&self, lexicon: &HeuristicLexicon, text: &str) -> Option<usize> {
        lexicon.program(text, self.n_locate).filter(|&z| z < self.n_programs)
    }
}

/// Encoder width whose baseline matches `target` prediction parameters most
/// closely, with the resulting count. Fails if the best is outside tolerance.
pub fn parity_width(template: &EncoderConfig, decoder_params: usize, target: usize) -> Result<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for h in 1..=1024 {
        let cfg = EncoderConfig { hidden: h, ..template.clone() };
        let mut store = ParamStore::new();
        let total = Encoder::init(cfg, &mut store, ENC, &mut rng)?.num_params(&store) + decoder_params;
        let diff = |t: usize| t.abs_diff(target);
        if best.is_none_or(|(_, b)| diff(total) < diff(b)) {
            best = Some((h, total));
        }
        if total > target {
            break;
        }
    }
    let (h, total) = best.expect("searched at least one width");
    if total.abs_diff(target) as f64 > PARITY_TOLERANCE * target as f64 {
        return Err(Error::invalid(format!(
            "{} encoder cannot match {target} parameters within {}% (closest {total} at width {h})",
            template.kind,
            PARITY_TOLERANCE * 100.0
        )));
    }
    Ok((h, total))
}

/// Result of [`train_baseline`].
#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub model: BaselineModel,
    /// The configuration with the solved width filled in.
    pub config: BaselineConfig,
    pub log: Vec<EpochLog>,
    pub diverged: Option<String>,
    /// Prediction parameters of the full model the width was matched against.
    pub parity_target: usize,
    pub dev_bleu4: f64,
}

/// Prediction-time parameters of the full model for this dataset and sizes.
pub fn truce_prediction_params(cfg: &TrainConfig, ds: &PairedDataset) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = TruceModel::new(
        cfg.model.clone(),
        cfg.ablations.direct_conditioning,
        cfg.lexicon,
        false,
        ds.vocab.clone(),
        &mut rng,
    )?;
    Ok(m.prediction_params())
}

pub fn train_baseline(cfg: &BaselineConfig, ds: &PairedDataset) -> Result<BaselineOutcome> {
    if cfg.w_cls.is_empty() {
        return Err(Error::invalid("no classification weight to train with"));
    }
    let t = ds
        .series_len()
        .ok_or_else(|| Error::invalid("baselines need series of one common length"))?;
    let tc = &cfg.train;
    let modules = &tc.model.modules;
    let d = modules.program_dim();
    let mut template = EncoderConfig::new(cfg.kind, cfg.hidden.unwrap_or(1), t, d);
    let mut truce_cfg = tc.clone();
    truce_cfg.ablations.direct_conditioning = false;
    let target = truce_prediction_params(&truce_cfg, ds)?;
    if cfg.hidden.is_none() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dec = Decoder::init(&tc.model.decoder, ds.vocab.len(), d, &mut store, DEC, &mut rng);
        let (h, total) = parity_width(&template, dec.num_params(&store), target)?;
        info!("{} encoder width {h}: {total} prediction parameters against {target}", cfg.kind);
        template.hidden = h;
    }
    let mut resolved = cfg.clone();
    resolved.hidden = Some(template.hidden);

    let mut best: Option<BaselineOutcome> = None;
    let mut log = Vec::new();
    for &w_cls in &cfg.w_cls {
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        let model = BaselineModel::new(
            template.clone(),
            &tc.model.decoder,
            modules.n_programs(),
            modules.n_locate,
            w_cls,
            tc.lexicon,
            ds.vocab.clone(),
            &mut rng,
        )?;
        let run = format!("{}enc w_cls={w_cls}", cfg.kind);
        let r = fit(model, tc, ds, &run, w_cls)?;
        log.extend(r.log);
        if let Some(d) = r.diverged {
            return Ok(BaselineOutcome {
                model: best.map_or(r.model, |b| b.model),
                config: resolved,
                log,
                diverged: Some(format!("{run}: {d}")),
                parity_target: target,
                dev_bleu4: f64::NAN,
            });
        }
        if best.as_ref().is_none_or(|b| r.best_bleu4 > b.dev_bleu4) {
            best = Some(BaselineOutcome {
                model: r.model,
                config: resolved.clone(),
                log: Vec::new(),
                diverged: None,
                parity_target: target,
                dev_bleu4: r.best_bleu4,
            });
        }
    }
    let mut out = best.expect("at least one weight");
    out.log = log;
    Ok(out)
}
