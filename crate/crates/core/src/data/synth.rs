//! Synthetic single-pattern series and template captions.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{split_for_rank, Location, PatternClass, PatternMeta, Record, Split, Trend};
use crate::error::{Error, Result};

pub const ALL_CLASSES: [PatternClass; 6] = [
    (Trend::Increase, Location::Begin),
    (Trend::Increase, Location::Middle),
    (Trend::Increase, Location::End),
    (Trend::Decrease, Location::Begin),
    (Trend::Decrease, Location::Middle),
    (Trend::Decrease, Location::End),
];

/// Training classes for the unseen-composition experiment.
pub const HOLDOUT_TRAIN_CLASSES: [PatternClass; 4] = [
    (Trend::Increase, Location::Begin),
    (Trend::Decrease, Location::End),
    (Trend::Increase, Location::Middle),
    (Trend::Decrease, Location::Middle),
];

/// The two compositions withheld from [`HOLDOUT_TRAIN_CLASSES`].
pub const HOLDOUT_CLASSES: [PatternClass; 2] = [
    (Trend::Increase, Location::End),
    (Trend::Decrease, Location::Begin),
];

/// `{t}` is replaced by a trend verb, `{l}` by a location phrase.
pub const TEMPLATE_FRAMES: [&str; 5] = [
    "stock {t} {l}",
    "price {t} {l}",
    "the series {t} {l}",
    "value {t} {l}",
    "{l} the price {t}",
];

pub const TREND_SYNONYMS: [(Trend, &[&str]); 2] = [
    (Trend::Increase, &["increases", "rises", "goes up"]),
    (Trend::Decrease, &["decreases", "declines", "dips"]),
];

pub const LOCATION_PHRASES: [(Location, &[&str]); 3] = [
    (
        Location::Begin,
        &["at the beginning", "at the start", "early on"],
    ),
    (
        Location::Middle,
        &["around the middle", "in the middle", "halfway through"],
    ),
    (Location::End, &["at the end", "near the end", "late"]),
];

const MAX_TRIES: usize = 100;
const NOISE: f32 = 2.0;

/// Inclusive index range a segment may occupy for `location` in a length-`t` series.
///
/// A position `p` belongs to the window when its relative centre `(p + 0.5) / t`
/// falls in the first 40%, the 30-70% band, or the last 40% respectively.
pub fn placement_window(location: Location, t: usize) -> (usize, usize) {
    let (lo, hi) = match location {
        Location::Begin => (0.0, 0.4),
        Location::Middle => (0.3, 0.7),
        Location::End => (0.6, 1.0),
    };
    let tf = t as f64;
    let first = ((lo * tf - 0.5).ceil().max(0.0)) as usize;
    let last = ((hi * tf - 0.5).floor() as usize).min(t - 1);
    (first, last)
}

/// Draws one series containing a single linear trend segment for `class`.
///
/// The segment realises `a * x + b` at `L` sorted random integer abscissae
/// (reversed for decreases), values outside it repeat the nearest segment
/// endpoint, and uniform noise on (-2, 2) is added everywhere. Draws that
/// leave (0, 100) are rejected and redrawn.
pub fn gen_synth_series<R: Rng>(
    class: PatternClass,
    t: usize,
    rng: &mut R,
) -> Result<(Vec<f32>, PatternMeta)> {
    for _ in 0..MAX_TRIES {
        let (clean, meta) = draw_clean(class, t, rng)?;
        let values: Vec<f32> = clean
            .iter()
            .map(|&v| v + rng.gen_range(-NOISE..NOISE))
            .collect();
        if values.iter().all(|&v| v > 0.0 && v < 100.0) {
            return Ok((values, meta));
        }
    }
    Err(Error::invalid(format!(
        "could not draw an in-range series for {class:?} in {MAX_TRIES} tries"
    )))
}

/// The noise-free shape: a flat run, the trend segment, another flat run.
pub(crate) fn draw_clean<R: Rng>(
    class: PatternClass,
    t: usize,
    rng: &mut R,
) -> Result<(Vec<f32>, PatternMeta)> {
    if t < 6 {
        return Err(Error::invalid(format!(
            "series length {t} leaves no valid segment length (need T >= 6)"
        )));
    }
    let (trend, location) = class;
    let (first, last) = placement_window(location, t);
    let max_len = (t / 3).min(last - first + 1);
    let len = rng.gen_range(2..=max_len);
    let slope = loop {
        let a: f32 = rng.gen_range(0.0..2.0);
        if a > 0.0 {
            break a;
        }
    };
    let intercept: f32 = rng.gen_range(1.0..20.0);
    let start = rng.gen_range(first..=last + 1 - len);

    let x_max = ((100.0 - intercept) / slope).floor() as usize;
    let mut xs = index::sample(rng, x_max + 1, len).into_vec();
    xs.sort_unstable();
    let mut seg: Vec<f32> = xs.iter().map(|&x| slope * x as f32 + intercept).collect();
    if trend == Trend::Decrease {
        seg.reverse();
    }
    let values = (0..t)
        .map(|p| {
            if p < start {
                seg[0]
            } else if p >= start + len {
                seg[len - 1]
            } else {
                seg[p - start]
            }
        })
        .collect();
    let meta = PatternMeta {
        trend,
        location,
        start,
        length: len,
        slope: if trend == Trend::Increase { slope } else { -slope },
        intercept,
    };
    Ok((values, meta))
}

/// One template caption naming exactly one trend and one location.
pub fn gen_synth_caption<R: Rng>(meta: &PatternMeta, rng: &mut R) -> String {
    let frame = TEMPLATE_FRAMES.choose(rng).unwrap();
    let verbs = TREND_SYNONYMS
        .iter()
        .find(|(t, _)| *t == meta.trend)
        .unwrap()
        .1;
    let places = LOCATION_PHRASES
        .iter()
        .find(|(l, _)| *l == meta.location)
        .unwrap()
        .1;
    let verb = verbs.choose(rng).unwrap();
    let place = places.choose(rng).unwrap();
    frame.replace("{t}", verb).replace("{l}", place)
}

/// Balanced synthetic corpus with three captions per series and a stratified 8:1:1 split.
pub fn gen_synth_dataset(
    n: usize,
    t: usize,
    classes: &[PatternClass],
    seed: u64,
) -> Result<Vec<Record>> {
    if classes.is_empty() {
        return Err(Error::invalid("class list is empty"));
    }
    if n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    let k = classes.len();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let class = classes[i % k];
        let (series, meta) = gen_synth_series(class, t, &mut rng)?;
        let captions = (0..3).map(|_| gen_synth_caption(&meta, &mut rng)).collect();
        records.push(Record {
            id: format!("synth-{i:05}"),
            series,
            captions,
            meta: Some(meta),
            split: Split::Train,
        });
    }

    // Stratified split: permute each class's members, then 8:1:1.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    for c in 0..k {
        let mut members: Vec<usize> = (c..n).step_by(k).collect();
        members.shuffle(&mut rng);
        let m = members.len();
        for (rank, &i) in members.iter().enumerate() {
            records[i].split = split_for_rank(rank, m);
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn windows_for_twelve() {
        assert_eq!(placement_window(Location::Begin, 12), (0, 4));
        assert_eq!(placement_window(Location::Middle, 12), (4, 7));
        assert_eq!(placement_window(Location::End, 12), (7, 11));
        assert_eq!(placement_window(Location::Begin, 6), (0, 1));
    }

    #[test]
    fn begin_segments_start_in_first_forty_percent() {
        let mut r = rng(1);
        for _ in 0..200 {
            let (_, m) = gen_synth_series((Trend::Increase, Location::Begin), 12, &mut r).unwrap();
            assert!((m.start as f64) < 0.4 * 12.0);
            assert!(m.length <= 4);
        }
    }

    #[test]
    fn decrease_segment_ends_lower() {
        let mut r = rng(2);
        for _ in 0..200 {
            let (clean, m) = draw_clean((Trend::Decrease, Location::End), 12, &mut r).unwrap();
            assert!(m.slope < 0.0);
            assert!(clean[m.start + m.length - 1] < clean[m.start]);
        }
    }

    #[test]
    fn short_series_rejected() {
        assert!(gen_synth_series(ALL_CLASSES[0], 5, &mut rng(0)).is_err());
    }

    #[test]
    fn template_examples() {
        let meta = |trend, location| PatternMeta {
            trend,
            location,
            start: 0,
            length: 2,
            slope: 1.0,
            intercept: 1.0,
        };
        let mut seen = std::collections::BTreeSet::new();
        let mut r = rng(3);
        for _ in 0..500 {
            seen.insert(gen_synth_caption(&meta(Trend::Increase, Location::Begin), &mut r));
            seen.insert(gen_synth_caption(&meta(Trend::Decrease, Location::Middle), &mut r));
        }
        assert!(seen.contains("stock rises at the beginning"));
        assert!(seen.contains("price declines around the middle"));
    }

    #[test]
    fn dataset_is_balanced_and_deterministic() {
        let a = gen_synth_dataset(720, 12, &ALL_CLASSES, 7).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for r in &a {
            *counts.entry(r.meta.as_ref().unwrap().class()).or_insert(0) += 1;
            assert_eq!(r.captions.len(), 3);
        }
        assert!(counts.values().all(|&c| c == 120));
        let b = gen_synth_dataset(720, 12, &ALL_CLASSES, 7).unwrap();
        assert_eq!(a, b);
        let four = gen_synth_dataset(720, 12, &HOLDOUT_TRAIN_CLASSES, 7).unwrap();
        assert_eq!(
            four.iter()
                .filter(|r| r.meta.as_ref().unwrap().class() == HOLDOUT_TRAIN_CLASSES[0])
                .count(),
            180
        );
    }

    #[test]
    fn empty_class_list_is_an_error() {
        assert!(gen_synth_dataset(10, 12, &[], 0).is_err());
    }
}
