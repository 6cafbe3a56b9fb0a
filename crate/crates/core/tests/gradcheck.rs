//! Finite-difference checks for every network and for the training losses.
//!
//! The full-gradient direction of each network must agree to `REL_TOL`
//! relative error plus the f32 output resolution of the instance. Single
//! tensors and single coordinates often carry
//! derivatives far below what an f32 loss resolves at this step, so those
//! checks also allow `ABS_TOL` of absolute disagreement, as do the composite
//! losses.

#[path = "common/grad.rs"]
mod grad;

use grad::{instance, Net, Pair, REL_TOL};

/// An f32 loss of magnitude ~20 carries rounding error of order
/// 2^-23 * 20 * 50 ~ 1e-5 after a recurrent pass over a caption. Divided by
/// the 2e-3 span of the central difference, that is ~5e-3 in the derivative.
const ABS_TOL: f64 = 1e-2;
const INSTANCES: u64 = 20;
/// Valid checks required per network; kink crossings are skipped.
const MIN_CHECKED: usize = 20;

fn loose_ok(p: &Pair) -> bool {
    p.abs_err() <= REL_TOL * p.analytic.abs().max(p.numeric.abs()) + ABS_TOL
}

fn run(net: Net, strict_global: bool) {
    let mut checked = 0;
    let mut worst_abs: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..INSTANCES {
        let r = instance(net, seed, true);
        if let Some(p) = r.global {
            checked += 1;
            let ok = if strict_global { r.agrees(&p) } else { loose_ok(&p) };
            if !ok {
                failures.push(format!("seed {seed} gradient direction: {p:?}"));
            }
        }
        for (name, p) in &r.parts {
            checked += 1;
            if p.rel_err() > REL_TOL {
                worst_abs = worst_abs.max(p.abs_err());
            }
            if !loose_ok(p) {
                failures.push(format!("seed {seed} {name}: {p:?}"));
            }
        }
    }
    println!("{}: {checked} checks, worst absolute error past relative tolerance {worst_abs:.2e}", net.name());
    assert!(checked >= MIN_CHECKED, "{}: only {checked} valid checks", net.name());
    assert!(failures.is_empty(), "{}:\n{}", net.name(), failures.join("\n"));
}

#[test]
fn pattern_modules() {
    run(Net::Pattern, true);
}

#[test]
fn locate_modules() {
    run(Net::Locate, true);
}

#[test]
fn combine_module() {
    run(Net::Combine, true);
}

#[test]
fn decoder() {
    run(Net::Decoder, true);
}

#[test]
fn inference_network() {
    run(Net::Inference, true);
}

#[test]
fn baseline_encoders() {
    for kind in truce::baselines::EncoderKind::ALL {
        run(Net::Encoder(kind), true);
    }
}

#[test]
fn prior_over_programs() {
    run(Net::Prior, false);
}

#[test]
fn elbo_with_auxiliary_term() {
    run(Net::ElboAux, false);
}

#[test]
fn marginal_likelihood_without_inference_net() {
    run(Net::Marginal, false);
}
