//! The variational objective, computed exactly by enumerating programs.

use super::model::{PairVars, TruceModel};
use crate::error::Result;
use crate::numerics::{Tape, Var};

/// Log-space quantities for one (series, caption) pair, in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct PairStats {
    pub log_prior: Vec<f64>,
    /// `log p(y | z)` per program.
    pub rec: Vec<f64>,
    pub log_q: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboParts {
    pub elbo: f64,
    /// Expected reconstruction `E_q[log p(y|z)]`.
    pub recon: f64,
    pub kl: f64,
}

pub fn logsumexp64(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Subtracts the log normaliser so `exp` of the result sums to one.
pub fn log_normalize(xs: &[f64]) -> Vec<f64> {
    let z = logsumexp64(xs);
    xs.iter().map(|x| x - z).collect()
}

/// `log sum_z p(z|x) p(y|z)`.
pub fn marginal_loglik_from(log_prior: &[f64], rec: &[f64]) -> f64 {
    let joint: Vec<f64> = log_prior.iter().zip(rec).map(|(a, b)| a + b).collect();
    logsumexp64(&joint)
}

/// `E_q[log p(y|z)] - KL(q || p)` for an arbitrary `log_q`.
pub fn elbo_from(log_q: &[f64], log_prior: &[f64], rec: &[f64]) -> ElboParts {
    let mut recon = 0.0;
    let mut kl = 0.0;
    for ((&lq, &lp), &r) in log_q.iter().zip(log_prior).zip(rec) {
        let q = lq.exp();
        if q > 0.0 {
            recon += q * r;
            kl += q * (lq - lp);
        }
    }
    ElboParts {
        elbo: recon - kl,
        recon,
        kl,
    }
}

/// `log p(z | x, y)`.
pub fn exact_log_posterior(log_prior: &[f64], rec: &[f64]) -> Vec<f64> {
    let joint: Vec<f64> = log_prior.iter().zip(rec).map(|(a, b)| a + b).collect();
    log_normalize(&joint)
}

/// Cross-entropy `-log q(z*)`.
pub fn aux_loss_from(log_q: &[f64], label: usize) -> f64 {
    -log_q[label]
}

/// Scalar loss and its logged parts for one pair.
pub struct PairLoss {
    pub loss: Var,
    pub elbo: f64,
    pub kl: f64,
    pub aux: f64,
}

/// Builds the per-pair loss on `tape`:
/// `-(elbo) + w_aux * (-log q(z*))`, or `-log p(y|x)` without the inference network.
pub fn pair_loss(
    model: &TruceModel,
    tape: &mut Tape,
    x: &[f32],
    ids: &[usize],
    label: Option<usize>,
    w_aux: f32,
    no_inference_net: bool,
) -> Result<PairLoss> {
    let PairVars { log_prior, rec, log_q } = model.pair_vars(tape, x, ids, !no_inference_net)?;
    let joint = tape.add(log_prior, rec);
    let marg = tape.logsumexp_rows(joint);
    let marginal = tape.value(marg).item() as f64;
    let Some(log_q) = log_q else {
        let loss = tape.scale(marg, -1.0);
        return Ok(PairLoss {
            loss,
            elbo: marginal,
            kl: 0.0,
            aux: 0.0,
        });
    };
    let q = tape.exp(log_q);
    let qr = tape.mul(q, rec);
    let recon = tape.sum(qr);
    let diff = tape.sub(log_q, log_prior);
    let qd = tape.mul(q, diff);
    let kl = tape.sum(qd);
    let elbo = tape.sub(recon, kl);
    let mut loss = tape.scale(elbo, -1.0);
    let mut aux = 0.0;
    if let (Some(z), true) = (label, w_aux > 0.0) {
        let picked = tape.pick(log_q, &[z]);
        aux = -tape.value(picked).item() as f64;
        let weighted = tape.scale(picked, -w_aux);
        let weighted = tape.reshape(weighted, &[1]);
        loss = tape.add(loss, weighted);
    }
    Ok(PairLoss {
        elbo: tape.value(elbo).item() as f64,
        kl: tape.value(kl).item() as f64,
        loss,
        aux,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_program_marginal_is_reconstruction() {
        assert_eq!(marginal_loglik_from(&[0.0], &[-3.25]), -3.25);
    }

    #[test]
    fn brute_force_sum_matches() {
        let lp = log_normalize(&[0.1, -0.4, 1.2, 0.3]);
        let rec = [-2.0f64, -5.5, -3.1, -0.7];
        let direct: f64 = lp.iter().zip(&rec).map(|(a, b)| a.exp() * b.exp()).sum::<f64>().ln();
        assert!((marginal_loglik_from(&lp, &rec) - direct).abs() < 1e-12);
    }

    #[test]
    fn prior_as_q_has_zero_kl_and_posterior_is_tight() {
        let lp = log_normalize(&[0.5, -1.0, 0.2, 2.0]);
        let rec = [-4.0, -1.0, -7.5, -3.0];
        assert!(elbo_from(&lp, &lp, &rec).kl.abs() < 1e-15);
        let post = exact_log_posterior(&lp, &rec);
        let e = elbo_from(&post, &lp, &rec);
        assert!((e.elbo - marginal_loglik_from(&lp, &rec)).abs() < 1e-12);
    }

    #[test]
    fn uniform_q_aux_loss_is_log_z() {
        let lq = log_normalize(&[0.0; 24]);
        assert!((aux_loss_from(&lq, 5) - 24f64.ln()).abs() < 1e-12);
        assert!((24f64.ln() - 3.178).abs() < 1e-3);
    }
}
