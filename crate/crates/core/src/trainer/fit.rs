//! Minibatch training shared by the full model and the baselines.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::captioner::Captioner;
use crate::data::{PairedDataset, Record, Split};
use crate::error::{Error, Result};
use crate::eval::metrics::bleu;
use crate::lexicon::HeuristicLexicon;
use crate::numerics::{AdamState, Grads, ParamStore, Tape, Var};

/// One training caption with its keyword label, if any.
#[derive(Clone, Debug)]
pub(crate) struct TrainPair {
    pub record: usize,
    pub ids: Vec<usize>,
    pub label: Option<usize>,
}

pub(crate) struct LossReport {
    pub loss: Var,
    /// ELBO for the full model, caption log-likelihood for baselines.
    pub elbo: f64,
    pub kl: f64,
    pub aux: f64,
}

/// Variational identities measured on the probe captions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub min_kl: f64,
    /// Largest `elbo - marginal`; must not be positive.
    pub max_elbo_excess: f64,
    /// Largest `|elbo(q = posterior) - marginal|`.
    pub max_tight_gap: f64,
    /// Largest `|sum(prior) - 1|`.
    pub max_prior_dev: f64,
    pub scores_in_range: bool,
    pub locate_in_range: bool,
}

pub const KL_TOL: f64 = 1e-7;
pub const ELBO_TOL: f64 = 1e-5;
pub const TIGHT_TOL: f64 = 1e-6;
pub const PRIOR_TOL: f64 = 1e-6;

impl ProbeStats {
    pub fn ok(&self) -> bool {
        self.min_kl >= -KL_TOL
            && self.max_elbo_excess <= ELBO_TOL
            && self.max_tight_gap < TIGHT_TOL
            && self.max_prior_dev <= PRIOR_TOL
            && self.scores_in_range
            && self.locate_in_range
    }
}

pub(crate) trait Fit: Captioner + Clone + Send {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Per-pair loss. `aux_scale` rescales the keyword term so that, after
    /// averaging over the batch, it is a mean over tagged captions only.
    fn loss(&self, tape: &mut Tape, x: &[f32], pair: &TrainPair, aux_scale: f32) -> Result<LossReport>;
    /// Program-space label for a caption, if the model uses one.
    fn label(&self, lexicon: &HeuristicLexicon, text: &str) -> Option<usize>;
    fn probe(&self, _records: &[&Record], _pairs: &[TrainPair]) -> Result<Option<ProbeStats>> {
        Ok(None)
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub run: String,
    pub epoch: usize,
    pub loss: f64,
    pub elbo: f64,
    pub kl: f64,
    pub aux: f64,
    pub dev_elbo: f64,
    pub dev_bleu4: f64,
    pub probe: Option<ProbeStats>,
}

pub(crate) struct FitResult<M> {
    pub model: M,
    pub log: Vec<EpochLog>,
    pub diverged: Option<String>,
    pub best_bleu4: f64,
}

pub(crate) fn build_pairs<M: Fit>(
    model: &M,
    records: &[&Record],
    lexicon: &HeuristicLexicon,
    use_labels: bool,
) -> Result<Vec<TrainPair>> {
    let mut out = Vec::new();
    for (ri, r) in records.iter().enumerate() {
        for c in &r.captions {
            let tokens = model.vocab().encode(c)?;
            out.push(TrainPair {
                record: ri,
                ids: tokens.ids,
                label: if use_labels { model.label(lexicon, c) } else { None },
            });
        }
    }
    Ok(out)
}

/// Greedy dev captions scored with Bleu-4 against all references.
pub(crate) fn dev_bleu4<M: Captioner>(model: &M, records: &[&Record], cfg: &TrainConfig) -> Result<f64> {
    if records.is_empty() {
        return Ok(0.0);
    }
    let outs = cfg.exec.map(records, |r| model.caption(&model.adapt(&r.series)));
    let mut cands = Vec::with_capacity(records.len());
    let mut refs = Vec::with_capacity(records.len());
    for (o, r) in outs.into_iter().zip(records) {
        cands.push(crate::data::split_words(&o?.text));
        refs.push(r.captions.iter().map(|c| crate::data::split_words(c)).collect());
    }
    Ok(bleu(&cands, &refs, 4))
}

pub(crate) fn fit<M: Fit>(mut model: M, cfg: &TrainConfig, ds: &PairedDataset, run: &str, w_aux: f32) -> Result<FitResult<M>> {
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let train = ds.split(Split::Train);
    let dev = ds.split(Split::Dev);
    if train.is_empty() {
        return Err(Error::invalid("dataset has no train split"));
    }
    let lexicon = HeuristicLexicon::new(cfg.lexicon);
    let pairs = build_pairs(&model, &train, &lexicon, w_aux > 0.0)?;
    let tagged = pairs.iter().filter(|p| p.label.is_some()).count();
    if w_aux > 0.0 && tagged == 0 {
        warn!("no caption matched the keyword lexicon; auxiliary loss contributes nothing");
    }
    info!("{run}: {} train captions, {tagged} tagged", pairs.len());
    let dev_pairs = build_pairs(&model, &dev, &lexicon, false)?;
    let probe_pairs: Vec<TrainPair> = dev_pairs.iter().take(cfg.probe_size).cloned().collect();

    let mut adam = AdamState::new(model.store(), cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, M)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut elbo_sum, mut kl_sum, mut aux_sum) = (0.0, 0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let tagged = batch.iter().filter(|&&i| pairs[i].label.is_some()).count();
            let aux_scale = if tagged == 0 { 0.0 } else { batch.len() as f32 / tagged as f32 };
            let results = cfg.exec.map(batch, |&i| -> Result<(Grads, [f64; 4])> {
                let p = &pairs[i];
                let mut tape = Tape::new(model.store());
                let rep = model.loss(&mut tape, &train[p.record].series, p, aux_scale)?;
                let value = tape.value(rep.loss).item() as f64;
                let grads = tape.backward(rep.loss)?;
                Ok((grads, [value, rep.elbo, rep.kl, rep.aux]))
            });
            let mut total: Option<Grads> = None;
            let mut failure = None;
            for r in results {
                match r {
                    Ok((g, parts)) => {
                        loss_sum += parts[0];
                        elbo_sum += parts[1];
                        kl_sum += parts[2];
                        aux_sum += parts[3];
                        match &mut total {
                            Some(t) => t.add(&g),
                            None => total = Some(g),
                        }
                    }
                    Err(e @ Error::NonFinite(_)) => {
                        failure = Some(e.to_string());
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            let grads = match (failure, total) {
                (None, Some(mut g)) => {
                    g.scale(1.0 / batch.len() as f32);
                    if g.is_finite() {
                        Ok(g)
                    } else {
                        Err("non-finite gradient".to_string())
                    }
                }
                (Some(detail), _) => Err(detail),
                (None, None) => unreachable!("batches are nonempty"),
            };
            let grads = match grads {
                Ok(g) => g,
                Err(detail) => {
                    warn!("{run}: diverged at epoch {epoch}: {detail}");
                    let model = best.map_or(model, |b| b.1);
                    return Ok(FitResult {
                        model,
                        log,
                        diverged: Some(format!("epoch {epoch}: {detail}")),
                        best_bleu4: f64::NAN,
                    });
                }
            };
            adam.step(model.store_mut(), &grads);
        }

        let probe = model.probe(&dev, &probe_pairs)?;
        if let Some(p) = &probe {
            if !p.ok() {
                return Err(Error::invalid(format!("{run}: variational identity violated at epoch {epoch}: {p:?}")));
            }
        }
        let dev_elbo = if dev_pairs.is_empty() {
            f64::NAN
        } else {
            let vals = cfg.exec.map(&dev_pairs, |p| -> Result<f64> {
                let mut tape = Tape::new(model.store());
                Ok(model.loss(&mut tape, &dev[p.record].series, p, 0.0)?.elbo)
            });
            vals.into_iter().sum::<Result<f64>>()? / dev_pairs.len() as f64
        };
        let bleu4 = dev_bleu4(&model, &dev, cfg)?;
        let n = pairs.len() as f64;
        let entry = EpochLog {
            run: run.to_string(),
            epoch,
            loss: loss_sum / n,
            elbo: elbo_sum / n,
            kl: kl_sum / n,
            aux: aux_sum / n,
            dev_elbo,
            dev_bleu4: bleu4,
            probe,
        };
        info!(
            "{run} epoch {epoch}: loss {:.4} elbo {:.4} kl {:.4} aux {:.4} dev elbo {:.4} dev bleu4 {:.4}",
            entry.loss, entry.elbo, entry.kl, entry.aux, entry.dev_elbo, entry.dev_bleu4
        );
        log.push(entry);

        if best.as_ref().is_none_or(|b| bleu4 > b.0) {
            best = Some((bleu4, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                info!("{run}: no dev improvement for {} epochs, stopping", cfg.patience);
                break;
            }
        }
    }
    let (best_bleu4, model) = best.unwrap_or((f64::NAN, model));
    Ok(FitResult {
        model,
        log,
        diverged: None,
        best_bleu4,
    })
}
