//! Variational training of the full model, its ablations, and persistence.

mod checkpoint;
mod config;
mod fit;
mod model;
mod objective;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, LoadedModel, Manifest, ModelSpec, FORMAT_VERSION, MAGIC};
pub use config::{Ablations, ModelConfig, TrainConfig, DEFAULT_LR};
pub use fit::{EpochLog, ProbeStats, ELBO_TOL, KL_TOL, PRIOR_TOL, TIGHT_TOL};
pub use model::TruceModel;
pub use objective::{
    aux_loss_from, elbo_from, exact_log_posterior, log_normalize, logsumexp64, marginal_loglik_from, pair_loss,
    ElboParts, PairLoss, PairStats,
};

pub(crate) use fit::{fit, Fit, LossReport, TrainPair};
pub(crate) use model::DEC;

use crate::data::{PairedDataset, Record};
use crate::error::{Error, Result};
use crate::lexicon::HeuristicLexicon;
use crate::numerics::{ParamStore, Tape};

impl Fit for TruceModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn loss(&self, tape: &mut Tape, x: &[f32], pair: &TrainPair, aux_scale: f32) -> Result<LossReport> {
        let l = objective::pair_loss(
            self,
            tape,
            x,
            &pair.ids,
            pair.label,
            self.w_aux * aux_scale,
            self.no_inference_net,
        )?;
        Ok(LossReport {
            loss: l.loss,
            elbo: l.elbo,
            kl: l.kl,
            aux: l.aux,
        })
    }

    fn label(&self, lexicon: &HeuristicLexicon, text: &str) -> Option<usize> {
        lexicon.program(text, self.config.modules.n_locate)
    }

    fn probe(&self, records: &[&Record], pairs: &[TrainPair]) -> Result<Option<ProbeStats>> {
        if self.no_inference_net {
            return Ok(None);
        }
        let mut s = ProbeStats {
            min_kl: f64::INFINITY,
            max_elbo_excess: f64::NEG_INFINITY,
            max_tight_gap: 0.0,
            max_prior_dev: 0.0,
            scores_in_range: true,
            locate_in_range: true,
        };
        for p in pairs {
            let x = &records[p.record].series;
            let st = self.pair_stats(x, &p.ids)?;
            let marginal = marginal_loglik_from(&st.log_prior, &st.rec);
            let e = elbo_from(&st.log_q, &st.log_prior, &st.rec);
            let post = exact_log_posterior(&st.log_prior, &st.rec);
            let tight = elbo_from(&post, &st.log_prior, &st.rec);
            s.min_kl = s.min_kl.min(e.kl);
            s.max_elbo_excess = s.max_elbo_excess.max(e.elbo - marginal);
            s.max_tight_gap = s.max_tight_gap.max((tight.elbo - marginal).abs());
            let prior = self.prior(x)?;
            let sum: f64 = prior.iter().map(|&v| v as f64).sum();
            s.max_prior_dev = s.max_prior_dev.max((sum - 1.0).abs());
            s.scores_in_range &= self.scores(x)?.iter().all(|&v| v > 0.0 && v < 1.0);
            for j in 0..self.config.modules.n_locate {
                let m = self.space.locate_forward(&self.store, j, x.len())?;
                s.locate_in_range &= m.iter().all(|&v| v > 0.0 && v <= 1.0);
            }
        }
        Ok((!pairs.is_empty()).then_some(s))
    }
}

/// Result of [`train_truce`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best model by dev Bleu-4, or the last good one if training diverged.
    pub model: TruceModel,
    pub log: Vec<EpochLog>,
    /// Description of the divergence, if training stopped on a non-finite value.
    pub diverged: Option<String>,
    pub lambda: f32,
    pub dev_bleu4: f64,
}

/// Trains one model per prior temperature in `cfg.lambdas` and keeps the best
/// by dev Bleu-4.
pub fn train_truce(cfg: &TrainConfig, ds: &PairedDataset) -> Result<TrainOutcome> {
    if cfg.lambdas.is_empty() {
        return Err(Error::invalid("no prior temperature to train with"));
    }
    let lexicon = HeuristicLexicon::new(cfg.lexicon);
    let m = &cfg.model.modules;
    m.validate()?;
    let w_aux = cfg.effective_w_aux();
    if w_aux > 0.0 {
        lexicon.check_instances(m.n_pattern, m.n_locate)?;
    }
    let mut best: Option<TrainOutcome> = None;
    let mut log = Vec::new();
    for &lambda in &cfg.lambdas {
        let mut mc = cfg.model.clone();
        mc.modules.lambda = lambda;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model = TruceModel::new(
            mc,
            cfg.ablations.direct_conditioning,
            cfg.lexicon,
            w_aux > 0.0,
            ds.vocab.clone(),
            &mut rng,
        )?;
        model.w_aux = w_aux;
        model.no_inference_net = cfg.ablations.no_inference_net;
        let run = format!("lambda={lambda}");
        let r = fit(model, cfg, ds, &run, w_aux)?;
        log.extend(r.log);
        if let Some(d) = r.diverged {
            return Ok(TrainOutcome {
                model: best.map_or(r.model, |b| b.model),
                log,
                diverged: Some(format!("{run}: {d}")),
                lambda,
                dev_bleu4: f64::NAN,
            });
        }
        info!("{run}: best dev bleu4 {:.4}", r.best_bleu4);
        if best.as_ref().is_none_or(|b| r.best_bleu4 > b.dev_bleu4) {
            best = Some(TrainOutcome {
                model: r.model,
                log: Vec::new(),
                diverged: None,
                lambda,
                dev_bleu4: r.best_bleu4,
            });
        }
    }
    let mut out = best.expect("at least one lambda");
    out.log = log;
    Ok(out)
}
