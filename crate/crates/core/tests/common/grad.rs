//! Analytic gradients against central finite differences.
//!
//! Each instance draws fresh parameters and inputs and reduces the network
//! output to a scalar with fixed random weights. Derivatives are compared along
//! directions in parameter space: the full gradient, each tensor's own gradient,
//! and the largest coordinates of each tensor. A step that flips any ReLU sign
//! is not a valid finite difference and is skipped.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use truce::baselines::{Encoder, EncoderConfig, EncoderKind};
use truce::data::{gen_synth_caption, gen_synth_series, Vocabulary, ALL_CLASSES};
use truce::lexicon::LexiconKind;
use truce::modules::{ModuleConfig, ProgramSpace};
use truce::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use truce::seq::{Decoder, DecoderConfig, InferenceConfig, InferenceNet};
use truce::trainer::{pair_loss, ModelConfig, TruceModel};

pub const STEP: f32 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
pub const TOP_COORDS: usize = 3;

/// One directional derivative: analytic, then numeric.
#[derive(Clone, Copy, Debug)]
pub struct Pair {
    pub analytic: f64,
    pub numeric: f64,
}

impl Pair {
    pub fn rel_err(&self) -> f64 {
        let d = (self.analytic - self.numeric).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.analytic.abs().max(self.numeric.abs())
        }
    }

    pub fn abs_err(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }
}

#[derive(Debug, Default)]
pub struct Report {
    /// Along the normalised full gradient.
    pub global: Option<Pair>,
    /// Per tensor direction and top coordinates, labelled by parameter name.
    pub parts: Vec<(String, Pair)>,
    pub skipped: usize,
    /// Worst-case change in the central difference from rounding each network
    /// output to f32: `eps * sum |o_i w_i| / (2 * STEP)`.
    pub resolution: f64,
}

impl Report {
    /// Within `REL_TOL` relative error, allowing the f32 resolution of the
    /// numeric side on top. Where the relative term dominates this is the
    /// plain relative test.
    pub fn agrees(&self, p: &Pair) -> bool {
        p.abs_err() <= REL_TOL * p.analytic.abs().max(p.numeric.abs()) + self.resolution
    }
}

/// Weighted sum of `out` with weights drawn once per instance.
fn reduce(tape: &mut Tape, out: Var, rng: &mut ChaCha8Rng) -> (Var, Tensor) {
    let shape = tape.shape(out).to_vec();
    let n = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect());
    let wc = tape.constant(w.clone());
    let prod = tape.mul(out, wc);
    (tape.sum(prod), w)
}

/// Same weighted sum accumulated in f64 from the f32 outputs, and the ReLU
/// sign pattern of the evaluation.
fn loss_at<F>(store: &ParamStore, f: &F, weights: &Tensor) -> (f64, Vec<bool>)
where
    F: Fn(&mut Tape) -> Var,
{
    let mut tape = Tape::new(store);
    let out = f(&mut tape);
    let loss = tape
        .value(out)
        .data()
        .iter()
        .zip(weights.data())
        .map(|(o, w)| *o as f64 * *w as f64)
        .sum();
    (loss, tape.relu_pattern())
}

/// Central difference along `±STEP * dir`. The analytic side uses the step
/// actually taken after rounding the shifted parameters to f32.
fn directional<F>(
    store: &ParamStore,
    grads: &[(ParamId, Tensor)],
    dir: &[(ParamId, Vec<f32>)],
    f: &F,
    weights: &Tensor,
    pattern: &[bool],
) -> Option<Pair>
where
    F: Fn(&mut Tape) -> Var,
{
    let shifted = |sign: f32| {
        let mut s = store.clone();
        for (id, d) in dir {
            for (v, dv) in s.get_mut(*id).data_mut().iter_mut().zip(d) {
                *v += sign * STEP * dv;
            }
        }
        s
    };
    let (plus, minus) = (shifted(1.0), shifted(-1.0));
    let (lp, pp) = loss_at(&plus, f, weights);
    let (lm, pm) = loss_at(&minus, f, weights);
    if pp != pattern || pm != pattern {
        return None;
    }
    let h2 = 2.0 * STEP as f64;
    let mut analytic = 0.0;
    for (id, _) in dir {
        let g = &grads.iter().find(|(gid, _)| gid == id).unwrap().1;
        let (p, m) = (plus.get(*id).data(), minus.get(*id).data());
        for ((gv, a), b) in g.data().iter().zip(p).zip(m) {
            analytic += *gv as f64 * ((*a as f64 - *b as f64) / h2);
        }
    }
    Some(Pair {
        analytic,
        numeric: (lp - lm) / h2,
    })
}

fn unit(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    (norm > 0.0).then(|| v.iter().map(|x| x / norm).collect())
}

/// Checks `f` against finite differences for the parameters in `ids`.
/// `detail` adds the per-tensor and per-coordinate directions.
pub fn check<F>(store: &ParamStore, ids: &[ParamId], f: F, detail: bool, rng: &mut ChaCha8Rng) -> Report
where
    F: Fn(&mut Tape) -> Var,
{
    assert!(!ids.is_empty());
    let mut tape = Tape::new(store);
    let out = f(&mut tape);
    let (loss, weights) = reduce(&mut tape, out, rng);
    let magnitude: f64 = tape
        .value(out)
        .data()
        .iter()
        .zip(weights.data())
        .map(|(o, w)| (*o as f64 * *w as f64).abs())
        .sum();
    let all = tape.backward(loss).unwrap();
    let pattern = tape.relu_pattern();
    let grads: Vec<(ParamId, Tensor)> = ids.iter().map(|&id| (id, all.get(id, store))).collect();
    let mut report = Report {
        resolution: f32::EPSILON as f64 * magnitude / (2.0 * STEP as f64),
        ..Report::default()
    };

    let flat: Vec<f32> = grads.iter().flat_map(|(_, g)| g.data().iter().copied()).collect();
    let flat = unit(&flat).expect("gradient is not identically zero");
    let mut global = Vec::new();
    let mut at = 0;
    for (id, g) in &grads {
        global.push((*id, flat[at..at + g.numel()].to_vec()));
        at += g.numel();
    }
    match directional(store, &grads, &global, &f, &weights, &pattern) {
        Some(p) => report.global = Some(p),
        None => report.skipped += 1,
    }
    if !detail {
        return report;
    }

    for (id, g) in &grads {
        let name = store.name(*id).to_string();
        let mut dirs: Vec<Vec<f32>> = unit(g.data()).into_iter().collect();
        let mut order: Vec<usize> = (0..g.numel()).collect();
        order.sort_by(|&i, &j| g.data()[j].abs().total_cmp(&g.data()[i].abs()));
        for &k in order.iter().take(TOP_COORDS) {
            let mut d = vec![0.0; g.numel()];
            d[k] = 1.0;
            dirs.push(d);
        }
        for d in dirs {
            match directional(store, &grads, &[(*id, d)], &f, &weights, &pattern) {
                Some(p) => report.parts.push((name.clone(), p)),
                None => report.skipped += 1,
            }
        }
    }
    report
}

/// Networks under test.
#[derive(Clone, Copy, Debug)]
pub enum Net {
    Pattern,
    Locate,
    Combine,
    Prior,
    Decoder,
    Inference,
    Encoder(EncoderKind),
    /// Full training loss: ELBO plus keyword cross-entropy on q.
    ElboAux,
    /// Training loss without the inference network.
    Marginal,
}

impl Net {
    pub fn listed() -> Vec<Net> {
        let mut v = vec![Net::Pattern, Net::Locate, Net::Combine, Net::Decoder, Net::Inference];
        v.extend(EncoderKind::ALL.into_iter().map(Net::Encoder));
        v
    }

    pub fn name(&self) -> String {
        match self {
            Net::Encoder(k) => format!("{k} encoder"),
            other => format!("{other:?}").to_lowercase(),
        }
    }
}

fn ids_with(store: &ParamStore, pred: impl Fn(&str) -> bool) -> Vec<ParamId> {
    store.ids().filter(|&id| pred(store.name(id))).collect()
}

fn series(rng: &mut ChaCha8Rng, t: usize) -> Vec<f32> {
    let class = ALL_CLASSES[rng.gen_range(0..ALL_CLASSES.len())];
    gen_synth_series(class, t, rng).unwrap().0
}

fn vocab_and_caption(rng: &mut ChaCha8Rng) -> (Vocabulary, Vec<usize>) {
    let mut caps = Vec::new();
    for _ in 0..30 {
        let class = ALL_CLASSES[rng.gen_range(0..ALL_CLASSES.len())];
        let (_, meta) = gen_synth_series(class, 12, rng).unwrap();
        caps.push(gen_synth_caption(&meta, rng));
    }
    let vocab = Vocabulary::build(caps.iter().map(String::as_str));
    let ids = vocab.encode(&caps[0]).unwrap().ids;
    (vocab, ids)
}

fn modules(rng: &mut ChaCha8Rng) -> (ParamStore, ProgramSpace) {
    let mut store = ParamStore::new();
    let space = ProgramSpace::init(ModuleConfig::default(), &mut store, "", rng).unwrap();
    (store, space)
}

fn model(rng: &mut ChaCha8Rng, vocab: Vocabulary) -> TruceModel {
    TruceModel::new(ModelConfig::default(), false, LexiconKind::Synth, true, vocab, rng).unwrap()
}

/// Runs one random instance of `net`, seeded by `seed`.
pub fn instance(net: Net, seed: u64, detail: bool) -> Report {
    let rng = &mut ChaCha8Rng::seed_from_u64(0x9c0d ^ seed.wrapping_mul(0x9e37_79b9));
    match net {
        Net::Pattern => {
            let (store, space) = modules(rng);
            let x = series(rng, 12);
            let ids = ids_with(&store, |n| n.starts_with("pattern.") && !n.ends_with("emb"));
            check(&store, &ids, |t| space.pattern_acts(t, &x), detail, rng)
        }
        Net::Locate => {
            let (store, space) = modules(rng);
            let t = [12, 24][rng.gen_range(0..2)];
            let ids = ids_with(&store, |n| n == "locate.logits");
            check(&store, &ids, |tape| space.locate_profiles(tape, t), detail, rng)
        }
        Net::Combine => {
            let (mut store, space) = modules(rng);
            // Move away from the fixed initial values.
            for name in ["combine.w", "combine.b"] {
                let id = store.id(name).unwrap();
                store.get_mut(id).data_mut()[0] += rng.gen_range(-0.5..0.5);
            }
            let x = series(rng, 12);
            let ids = ids_with(&store, |n| n.starts_with("combine."));
            check(&store, &ids, |t| space.scores_on_tape(t, &x), detail, rng)
        }
        Net::Prior => {
            let (store, space) = modules(rng);
            let x = series(rng, 12);
            let ids = ids_with(&store, |n| !n.ends_with("emb"));
            let f = |t: &mut Tape| {
                let s = space.scores_on_tape(t, &x);
                space.log_prior_on_tape(t, s)
            };
            check(&store, &ids, f, detail, rng)
        }
        Net::Decoder => {
            let (vocab, ids) = vocab_and_caption(rng);
            let mut store = ParamStore::new();
            let dec = Decoder::init(&DecoderConfig::default(), vocab.len(), 36, &mut store, "dec.", rng);
            let cond = Tensor::new(vec![3, 36], (0..108).map(|_| rng.gen_range(-1.0f32..1.0)).collect());
            let pids: Vec<ParamId> = store.ids().collect();
            let f = |t: &mut Tape| {
                let c = t.constant(cond.clone());
                dec.logprob_rows(t, c, &ids).unwrap()
            };
            check(&store, &pids, f, detail, rng)
        }
        Net::Inference => {
            let (vocab, ids) = vocab_and_caption(rng);
            let mut store = ParamStore::new();
            let net = InferenceNet::init(&InferenceConfig::default(), vocab.len(), 24, &mut store, "inf.", rng);
            let pids: Vec<ParamId> = store.ids().collect();
            check(&store, &pids, |t| net.log_q_on_tape(t, &ids).unwrap(), detail, rng)
        }
        Net::Encoder(kind) => {
            let mut store = ParamStore::new();
            let enc = Encoder::init(EncoderConfig::new(kind, 8, 12, 36), &mut store, "enc.", rng).unwrap();
            let x = series(rng, 12);
            let pids: Vec<ParamId> = store.ids().collect();
            check(&store, &pids, |t| enc.encode_on_tape(t, &x).unwrap(), detail, rng)
        }
        Net::ElboAux => {
            let (vocab, ids) = vocab_and_caption(rng);
            let m = model(rng, vocab);
            let x = series(rng, 12);
            let label = rng.gen_range(0..24);
            let pids: Vec<ParamId> = m.store.ids().collect();
            let f = |t: &mut Tape| pair_loss(&m, t, &x, &ids, Some(label), 1.0, false).unwrap().loss;
            check(&m.store, &pids, f, detail, rng)
        }
        Net::Marginal => {
            let (vocab, ids) = vocab_and_caption(rng);
            let m = model(rng, vocab);
            let x = series(rng, 12);
            let pids = ids_with(&m.store, |n| !n.starts_with("inf."));
            let f = |t: &mut Tape| pair_loss(&m, t, &x, &ids, None, 0.0, true).unwrap().loss;
            check(&m.store, &pids, f, detail, rng)
        }
    }
}

/// Full-gradient checks on `want` instances with a valid central difference,
/// drawing further instances past kink crossings.
pub fn global_checks(net: Net, want: usize) -> Vec<(Pair, bool)> {
    let mut out = Vec::new();
    let mut seed = 0;
    while out.len() < want && seed < 3 * want as u64 {
        let r = instance(net, seed, false);
        if let Some(p) = r.global {
            out.push((p, r.agrees(&p)));
        }
        seed += 1;
    }
    out
}
