//! Pattern, locate and combine modules, the program space and its prior.
//!
//! A program `z` pairs pattern instance `i` with locate instance `j`, numbered
//! `z = i * n_locate + j`. Its truth score is
//! `sigmoid(w * mean_t(a_i[t] * m_j[t]) + b)` where `a_i` is the pattern
//! activation over the series and `m_j` the locate profile.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softmax_in_place, ParamId, ParamStore, Tape, Tensor, Var};

/// Raw series values are divided by this before the pattern convolutions.
pub const INPUT_SCALE: f32 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModuleConfig {
    pub n_pattern: usize,
    pub n_locate: usize,
    /// Channels of the first pattern convolution.
    pub channels: usize,
    pub kernel_width: usize,
    /// Gaussians in each locate mixture.
    pub n_gaussians: usize,
    /// Embedding width of each module; a program embedding is twice this.
    pub emb_dim: usize,
    /// Prior temperature.
    pub lambda: f32,
}

impl Default for ModuleConfig {
    fn default() -> Self {
        Self {
            n_pattern: 6,
            n_locate: 4,
            channels: 8,
            kernel_width: 5,
            n_gaussians: 6,
            emb_dim: 18,
            lambda: 10.0,
        }
    }
}

impl ModuleConfig {
    pub fn n_programs(&self) -> usize {
        self.n_pattern * self.n_locate
    }

    pub fn program_dim(&self) -> usize {
        2 * self.emb_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pattern == 0 || self.n_locate == 0 || self.n_gaussians == 0 {
            return Err(Error::invalid("module instance counts must be positive"));
        }
        if self.kernel_width.is_multiple_of(2) || self.channels == 0 || self.emb_dim == 0 {
            return Err(Error::invalid(
                "kernel width must be odd; channels and embedding width positive",
            ));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct PatternIds {
    k1: ParamId,
    b1: ParamId,
    k2: ParamId,
    b2: ParamId,
}

/// Handles to every module parameter inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ProgramSpace {
    pub config: ModuleConfig,
    patterns: Vec<PatternIds>,
    locate_logits: ParamId,
    combine_w: ParamId,
    combine_b: ParamId,
    pattern_emb: ParamId,
    locate_emb: ParamId,
}

impl ProgramSpace {
    /// Registers freshly initialised module parameters under `prefix`.
    pub fn init<R: Rng>(
        config: ModuleConfig,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let patterns = (0..c.n_pattern)
            .map(|i| PatternIds {
                k1: store.add_uniform(
                    format!("{prefix}pattern.{i}.k1"),
                    &[c.channels, 1, c.kernel_width],
                    0.1,
                    rng,
                ),
                b1: store.add_uniform(format!("{prefix}pattern.{i}.b1"), &[1, c.channels], 0.1, rng),
                k2: store.add_uniform(
                    format!("{prefix}pattern.{i}.k2"),
                    &[1, c.channels, c.kernel_width],
                    0.1,
                    rng,
                ),
                b2: store.add_uniform(format!("{prefix}pattern.{i}.b2"), &[1, 1], 0.1, rng),
            })
            .collect();
        let locate_logits = store.add_uniform(
            format!("{prefix}locate.logits"),
            &[c.n_locate, c.n_gaussians],
            0.1,
            rng,
        );
        let combine_w = store.add(format!("{prefix}combine.w"), Tensor::full(&[1, 1], 1.0));
        let combine_b = store.add(format!("{prefix}combine.b"), Tensor::full(&[1, 1], -1.0));
        let pattern_emb =
            store.add_uniform(format!("{prefix}pattern.emb"), &[c.n_pattern, c.emb_dim], 0.1, rng);
        let locate_emb =
            store.add_uniform(format!("{prefix}locate.emb"), &[c.n_locate, c.emb_dim], 0.1, rng);
        Ok(Self {
            config,
            patterns,
            locate_logits,
            combine_w,
            combine_b,
            pattern_emb,
            locate_emb,
        })
    }

    /// Looks the parameters up by name in an existing store.
    pub fn bind(config: ModuleConfig, store: &ParamStore, prefix: &str) -> Result<Self> {
        config.validate()?;
        let get = |name: String| {
            store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
        };
        let patterns = (0..config.n_pattern)
            .map(|i| {
                Ok(PatternIds {
                    k1: get(format!("{prefix}pattern.{i}.k1"))?,
                    b1: get(format!("{prefix}pattern.{i}.b1"))?,
                    k2: get(format!("{prefix}pattern.{i}.k2"))?,
                    b2: get(format!("{prefix}pattern.{i}.b2"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            patterns,
            locate_logits: get(format!("{prefix}locate.logits"))?,
            combine_w: get(format!("{prefix}combine.w"))?,
            combine_b: get(format!("{prefix}combine.b"))?,
            pattern_emb: get(format!("{prefix}pattern.emb"))?,
            locate_emb: get(format!("{prefix}locate.emb"))?,
            config,
        })
    }

    pub fn n_programs(&self) -> usize {
        self.config.n_programs()
    }

    /// `(pattern, locate)` instance indices of program `z`.
    pub fn split_program(&self, z: usize) -> (usize, usize) {
        (z / self.config.n_locate, z % self.config.n_locate)
    }

    pub fn program_id(&self, pattern: usize, locate: usize) -> usize {
        pattern * self.config.n_locate + locate
    }

    pub fn check_program(&self, pattern: usize, locate: usize) -> Result<()> {
        if pattern >= self.config.n_pattern || locate >= self.config.n_locate {
            return Err(Error::invalid(format!(
                "program ({pattern}, {locate}) outside {}x{} space",
                self.config.n_pattern, self.config.n_locate
            )));
        }
        Ok(())
    }

    fn check_len(&self, t: usize) -> Result<()> {
        if t < self.config.kernel_width {
            return Err(Error::invalid(format!(
                "series length {t} shorter than kernel width {}",
                self.config.kernel_width
            )));
        }
        Ok(())
    }

    // ---- tape forward ----

    /// Pattern activations of every instance, `[n_pattern x T]`.
    pub fn pattern_acts(&self, tape: &mut Tape, x: &[f32]) -> Var {
        let input = tape.constant(Tensor::matrix(
            1,
            x.len(),
            x.iter().map(|v| v / INPUT_SCALE).collect(),
        ));
        let rows: Vec<Var> = self
            .patterns
            .iter()
            .map(|p| {
                let (k1, b1, k2, b2) = (
                    tape.param(p.k1),
                    tape.param(p.b1),
                    tape.param(p.k2),
                    tape.param(p.b2),
                );
                let h = tape.conv1d(input, k1, b1);
                let h = tape.relu(h);
                let o = tape.conv1d(h, k2, b2);
                tape.sigmoid(o)
            })
            .collect();
        tape.concat_rows(&rows)
    }

    /// Locate profiles of every instance for length `t`, `[n_locate x T]`.
    pub fn locate_profiles(&self, tape: &mut Tape, t: usize) -> Var {
        let logits = tape.param(self.locate_logits);
        let weights = tape.softmax_rows(logits);
        let basis = tape.constant(gaussian_basis(self.config.n_gaussians, t));
        tape.matmul(weights, basis)
    }

    /// Truth scores of all programs, `[Z x 1]`.
    pub fn scores_on_tape(&self, tape: &mut Tape, x: &[f32]) -> Var {
        let a = self.pattern_acts(tape, x);
        let m = self.locate_profiles(tape, x.len());
        self.combine_on_tape(tape, a, m, x.len())
    }

    fn combine_on_tape(&self, tape: &mut Tape, a: Var, m: Var, t: usize) -> Var {
        let mt = tape.transpose(m);
        let pooled = tape.matmul(a, mt);
        let pooled = tape.scale(pooled, 1.0 / t as f32);
        let pooled = tape.reshape(pooled, &[self.n_programs(), 1]);
        let w = tape.param(self.combine_w);
        let b = tape.param(self.combine_b);
        let lin = tape.matmul(pooled, w);
        let lin = tape.add_row(lin, b);
        tape.sigmoid(lin)
    }

    /// `log p(z | x)` as a `[1 x Z]` row.
    pub fn log_prior_on_tape(&self, tape: &mut Tape, scores: Var) -> Var {
        let row = tape.reshape(scores, &[1, self.n_programs()]);
        let scaled = tape.scale(row, self.config.lambda);
        tape.log_softmax_rows(scaled)
    }

    /// Embeddings of all programs, `[Z x 2*emb_dim]`.
    pub fn embeddings_on_tape(&self, tape: &mut Tape) -> Var {
        let z = self.n_programs();
        let pi: Vec<usize> = (0..z).map(|k| self.split_program(k).0).collect();
        let li: Vec<usize> = (0..z).map(|k| self.split_program(k).1).collect();
        self.embeddings_for(tape, &pi, &li)
    }

    /// Embedding rows for explicit `(pattern, locate)` pairs.
    pub fn embeddings_for(&self, tape: &mut Tape, patterns: &[usize], locates: &[usize]) -> Var {
        let pe = tape.param(self.pattern_emb);
        let le = tape.param(self.locate_emb);
        let p = tape.embedding(pe, patterns);
        let l = tape.embedding(le, locates);
        tape.concat_cols(&[p, l])
    }

    // ---- plain evaluation ----

    pub fn pattern_forward(&self, store: &ParamStore, i: usize, x: &[f32]) -> Result<Vec<f32>> {
        self.check_len(x.len())?;
        if i >= self.config.n_pattern {
            return Err(Error::invalid(format!("pattern instance {i} out of range")));
        }
        let mut tape = Tape::new(store);
        let a = self.pattern_acts(&mut tape, x);
        Ok(tape.value(a).row_slice(i).to_vec())
    }

    pub fn locate_forward(&self, store: &ParamStore, j: usize, t: usize) -> Result<Vec<f32>> {
        if j >= self.config.n_locate || t == 0 {
            return Err(Error::invalid(format!("locate instance {j} or length {t} invalid")));
        }
        let mut tape = Tape::new(store);
        let m = self.locate_profiles(&mut tape, t);
        Ok(tape.value(m).row_slice(j).to_vec())
    }

    /// `sigmoid(w * mean(a * m) + b)` with the stored combine parameters.
    pub fn combine_forward(&self, store: &ParamStore, a: &[f32], m: &[f32]) -> Result<f32> {
        let w = store.get(self.combine_w).item();
        let b = store.get(self.combine_b).item();
        combine_scalar(w, b, a, m)
    }

    pub fn score_program(&self, store: &ParamStore, z: (usize, usize), x: &[f32]) -> Result<f32> {
        self.check_program(z.0, z.1)?;
        let a = self.pattern_forward(store, z.0, x)?;
        let m = self.locate_forward(store, z.1, x.len())?;
        self.combine_forward(store, &a, &m)
    }

    /// Scores of all programs in program-id order.
    pub fn scores(&self, store: &ParamStore, x: &[f32]) -> Result<Vec<f32>> {
        self.check_len(x.len())?;
        let mut tape = Tape::new(store);
        let s = self.scores_on_tape(&mut tape, x);
        Ok(tape.value(s).data().to_vec())
    }

    /// `p(z | x)` over all programs.
    pub fn prior(&self, store: &ParamStore, x: &[f32]) -> Result<Vec<f32>> {
        Ok(prior_from_scores(&self.scores(store, x)?, self.config.lambda))
    }

    pub fn program_embedding(&self, store: &ParamStore, z: usize) -> Result<Vec<f32>> {
        let (i, j) = self.split_program(z);
        self.check_program(i, j)?;
        let d = self.config.emb_dim;
        let mut out = Vec::with_capacity(2 * d);
        out.extend_from_slice(store.get(self.pattern_emb).row_slice(i));
        out.extend_from_slice(store.get(self.locate_emb).row_slice(j));
        Ok(out)
    }

    /// Names of every parameter owned by the modules.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .patterns
            .iter()
            .flat_map(|p| [p.k1, p.b1, p.k2, p.b2])
            .collect();
        ids.extend([
            self.locate_logits,
            self.combine_w,
            self.combine_b,
            self.pattern_emb,
            self.locate_emb,
        ]);
        ids
    }
}

/// `B[k][t] = exp(-(t_rel - mu_k)^2 / (2 sigma^2))` with `t_rel = (t + 0.5) / T`,
/// `mu_k = (k + 0.5) / K` and `sigma = 1 / K`.
pub fn gaussian_basis(k: usize, t: usize) -> Tensor {
    let sigma = 1.0 / k as f64;
    let mut out = Vec::with_capacity(k * t);
    for ki in 0..k {
        let mu = (ki as f64 + 0.5) / k as f64;
        for ti in 0..t {
            let rel = (ti as f64 + 0.5) / t as f64;
            out.push((-(rel - mu).powi(2) / (2.0 * sigma * sigma)).exp() as f32);
        }
    }
    Tensor::matrix(k, t, out)
}

/// Same arithmetic, in the same order, as the batched tape path.
pub fn combine_scalar(w: f32, b: f32, a: &[f32], m: &[f32]) -> Result<f32> {
    if a.len() != m.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "combine needs equal nonempty lengths, got {} and {}",
            a.len(),
            m.len()
        )));
    }
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(m) {
        acc += x * y;
    }
    let pooled = acc * (1.0 / a.len() as f32);
    Ok(sigmoid(pooled * w + b))
}

pub fn prior_from_scores(scores: &[f32], lambda: f32) -> Vec<f32> {
    let mut p: Vec<f32> = scores.iter().map(|s| s * lambda).collect();
    softmax_in_place(&mut p);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space(seed: u64) -> (ParamStore, ProgramSpace) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = ProgramSpace::init(ModuleConfig::default(), &mut store, "", &mut rng).unwrap();
        (store, sp)
    }

    fn zero_all(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }

    fn ramp(t: usize) -> Vec<f32> {
        (0..t).map(|i| 10.0 + 5.0 * i as f32).collect()
    }

    #[test]
    fn zero_kernels_give_half() {
        let (mut store, sp) = space(0);
        zero_all(&mut store);
        let a = sp.pattern_forward(&store, 0, &[40.0; 12]).unwrap();
        assert!(a.iter().all(|&v| v == 0.5));
        assert!(sp.scores(&store, &ramp(12)).unwrap().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn output_length_matches_input() {
        let (store, sp) = space(1);
        for t in [12, 24] {
            assert_eq!(sp.pattern_forward(&store, 2, &ramp(t)).unwrap().len(), t);
        }
    }

    #[test]
    fn difference_kernel_prefers_the_rise() {
        let (mut store, sp) = space(2);
        zero_all(&mut store);
        let p = sp.patterns[0];
        // Channel 0 computes x[t+1] - x[t-1]; the second layer passes it through, scaled.
        store.get_mut(p.k1).data_mut()[..5].copy_from_slice(&[0.0, -1.0, 0.0, 1.0, 0.0]);
        store.get_mut(p.k2).data_mut()[2] = 20.0;
        let mut x = vec![20.0; 12];
        for (i, v) in x.iter_mut().enumerate().skip(4).take(4) {
            *v = 20.0 + 10.0 * (i - 3) as f32;
        }
        for v in x.iter_mut().skip(8) {
            *v = 60.0;
        }
        let a = sp.pattern_forward(&store, 0, &x).unwrap();
        let rise = a[5];
        assert!(rise > a[0] + 0.1 && rise > a[11] + 0.1, "{a:?}");
    }

    #[test]
    fn one_hot_locate_peaks_near_its_mean() {
        let (mut store, sp) = space(3);
        let logits = store.get_mut(sp.locate_logits);
        logits.data_mut().fill(0.0);
        logits.data_mut()[1] = 30.0; // instance 0, component 1: mu = 0.25
        let m = sp.locate_forward(&store, 0, 10).unwrap();
        let (argmax, peak) = m
            .iter()
            .enumerate()
            .fold((0, 0.0f32), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert_eq!(argmax, 2); // (2 + 0.5) / 10 = 0.25
        assert!(peak > 0.999 && peak <= 1.0);
    }

    #[test]
    fn uniform_locate_is_symmetric() {
        let (mut store, sp) = space(4);
        store.get_mut(sp.locate_logits).data_mut().fill(0.0);
        let m = sp.locate_forward(&store, 1, 12).unwrap();
        for t in 0..12 {
            assert!((m[t] - m[11 - t]).abs() < 1e-6);
        }
    }

    #[test]
    fn locate_profile_resamples_across_lengths() {
        let (store, sp) = space(5);
        for j in 0..4 {
            let m12 = sp.locate_forward(&store, j, 12).unwrap();
            let m24 = sp.locate_forward(&store, j, 24).unwrap();
            for (t, v) in m24.iter().enumerate() {
                let rel = (t as f64 + 0.5) / 24.0;
                let nearest = ((rel * 12.0 - 0.5).round().clamp(0.0, 11.0)) as usize;
                assert!((v - m12[nearest]).abs() < 0.05);
            }
        }
    }

    #[test]
    fn combine_limits_and_errors() {
        assert_eq!(combine_scalar(1.0, -1.0, &[0.0; 4], &[0.7; 4]).unwrap(), sigmoid(-1.0));
        assert!(combine_scalar(1.0, 0.0, &[0.1; 3], &[0.1; 4]).is_err());
    }

    #[test]
    fn batched_scores_equal_per_program_composition() {
        let (store, sp) = space(6);
        let x: Vec<f32> = (0..12).map(|i| 50.0 + 30.0 * (i as f32 * 0.7).sin()).collect();
        let all = sp.scores(&store, &x).unwrap();
        for z in 0..sp.n_programs() {
            let (i, j) = sp.split_program(z);
            assert_eq!(all[z], sp.score_program(&store, (i, j), &x).unwrap());
        }
        assert!(sp.score_program(&store, (6, 0), &x).is_err());
    }

    #[test]
    fn large_lambda_concentrates_prior() {
        let mut s = vec![0.3f32; 24];
        s[7] = 0.35;
        let p = prior_from_scores(&s, 1000.0);
        assert!(p[7] >= 0.999);
        let flat = prior_from_scores(&s, 1e-9);
        assert!(flat.iter().all(|&v| (v - 1.0 / 24.0).abs() < 1e-6));
    }

    #[test]
    fn embeddings_share_module_halves() {
        let (store, sp) = space(7);
        let a = sp.program_embedding(&store, sp.program_id(2, 0)).unwrap();
        let b = sp.program_embedding(&store, sp.program_id(2, 3)).unwrap();
        assert_eq!(a.len(), 36);
        assert_eq!(a[..18], b[..18]);
        assert_ne!(a[18..], b[18..]);
    }

    fn series(t: usize) -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(0.5f32..99.5, t)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn locate_profiles_in_unit_interval(seed in 0u64..200, t in 1usize..40) {
            let (store, sp) = space(seed);
            let mut tape = Tape::new(&store);
            let m = sp.locate_profiles(&mut tape, t);
            prop_assert!(tape.value(m).data().iter().all(|&v| v > 0.0 && v <= 1.0));
        }

        #[test]
        fn scores_strictly_inside_unit_interval(x in series(12), seed in 0u64..50) {
            let (store, sp) = space(seed);
            for s in sp.scores(&store, &x).unwrap() {
                prop_assert!(s > 0.0 && s < 1.0);
            }
        }

        #[test]
        fn prior_normalised_shift_invariant_and_monotone(
            s in prop::collection::vec(0.01f32..0.99, 24),
            c in -0.5f32..0.5,
            lambda in 0.5f32..20.0,
        ) {
            let p = prior_from_scores(&s, lambda);
            prop_assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            let shifted: Vec<f32> = s.iter().map(|v| v + c).collect();
            let q = prior_from_scores(&shifted, lambda);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-6);
            }
            let arg = |v: &[f32]| v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best });
            prop_assert_eq!(arg(&p), arg(&s));
        }

        #[test]
        fn combine_is_permutation_and_repetition_invariant(
            pairs in prop::collection::vec((0.0f32..1.0, 0.0f32..1.0), 12),
            w in -3.0f32..3.0,
            b in -2.0f32..2.0,
            shift in 0usize..12,
        ) {
            let (a, m): (Vec<f32>, Vec<f32>) = pairs.iter().copied().unzip();
            let base = combine_scalar(w, b, &a, &m).unwrap();
            let mut ra = a.clone();
            let mut rm = m.clone();
            ra.rotate_left(shift);
            rm.rotate_left(shift);
            prop_assert!((combine_scalar(w, b, &ra, &rm).unwrap() - base).abs() < 1e-6);
            let da: Vec<f32> = a.iter().flat_map(|&v| [v, v]).collect();
            let dm: Vec<f32> = m.iter().flat_map(|&v| [v, v]).collect();
            prop_assert!((combine_scalar(w, b, &da, &dm).unwrap() - base).abs() < 1e-6);
        }
    }

    #[test]
    fn dilated_series_scores_close() {
        for seed in 0..5 {
            let (store, sp) = space(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let class = crate::data::ALL_CLASSES[seed as usize % 6];
            let (clean, _) = crate::data::draw_clean(class, 12, &mut rng).unwrap();
            let dilated: Vec<f32> = clean.iter().flat_map(|&v| [v, v]).collect();
            let a = sp.scores(&store, &clean).unwrap();
            let b = sp.scores(&store, &dilated).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 0.1);
            }
        }
    }
}
