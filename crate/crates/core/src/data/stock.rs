//! Sampling normalized fixed-length windows from raw price histories.

use std::fs;
use std::path::Path;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values on each side of a window that also bound its min/max.
pub const CONTEXT_VALUES: usize = 10;

const MAX_DRAW_ATTEMPTS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Daily,
    Weekly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriceSeries {
    pub company: String,
    pub granularity: Granularity,
    pub prices: Vec<f64>,
}

/// Where a sampled window came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub company: String,
    pub granularity: Granularity,
    pub start: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub series: Vec<f32>,
    pub provenance: Provenance,
}

/// Rescales `window` to 0..100 using the min and max over the window and its context.
pub fn normalize_window(window: &[f64], before: &[f64], after: &[f64]) -> Result<Vec<f32>> {
    if window.is_empty() {
        return Err(Error::invalid("empty window"));
    }
    if before.len() > CONTEXT_VALUES || after.len() > CONTEXT_VALUES {
        return Err(Error::invalid(format!(
            "context longer than {CONTEXT_VALUES} values"
        )));
    }
    let all = || before.iter().chain(window).chain(after).copied();
    let min = all().fold(f64::INFINITY, f64::min);
    let max = all().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(Error::DegenerateWindow);
    }
    Ok(window
        .iter()
        .map(|&v| (100.0 * (v - min) / (max - min)) as f32)
        .collect())
}

/// Draws up to `count` non-overlapping windows of length `t`.
///
/// Each draw picks a company uniformly, then a granularity uniformly among
/// those available for it, then a start position. Returns the windows and the
/// number of draws that had to be abandoned (no free room or degenerate).
pub fn sample_stock_windows<R: Rng>(
    sources: &[PriceSeries],
    t: usize,
    count: usize,
    rng: &mut R,
) -> Result<(Vec<WindowSample>, usize)> {
    if t == 0 {
        return Err(Error::invalid("window length must be positive"));
    }
    for s in sources {
        if s.prices.len() < t + 2 * CONTEXT_VALUES {
            return Err(Error::invalid(format!(
                "{} ({:?}) has {} prices; need at least {}",
                s.company,
                s.granularity,
                s.prices.len(),
                t + 2 * CONTEXT_VALUES
            )));
        }
    }
    let mut companies: Vec<&str> = sources.iter().map(|s| s.company.as_str()).collect();
    companies.sort_unstable();
    companies.dedup();
    if companies.is_empty() {
        return Err(Error::invalid("no price series given"));
    }

    let mut used: Vec<Vec<usize>> = vec![Vec::new(); sources.len()];
    let mut out = Vec::with_capacity(count);
    let mut abandoned = 0;
    let mut degenerate = 0;
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..MAX_DRAW_ATTEMPTS {
            let company = companies[rng.gen_range(0..companies.len())];
            let options: Vec<usize> = sources
                .iter()
                .enumerate()
                .filter(|(_, s)| s.company == company)
                .map(|(i, _)| i)
                .collect();
            let si = options[rng.gen_range(0..options.len())];
            let src = &sources[si];
            let start = rng.gen_range(0..=src.prices.len() - t);
            if used[si].iter().any(|&u| start < u + t && u < start + t) {
                continue;
            }
            let before = &src.prices[start.saturating_sub(CONTEXT_VALUES)..start];
            let after_end = (start + t + CONTEXT_VALUES).min(src.prices.len());
            let after = &src.prices[start + t..after_end];
            match normalize_window(&src.prices[start..start + t], before, after) {
                Ok(series) => {
                    used[si].push(start);
                    out.push(WindowSample {
                        series,
                        provenance: Provenance {
                            company: src.company.clone(),
                            granularity: src.granularity,
                            start,
                        },
                    });
                    placed = true;
                    break;
                }
                Err(Error::DegenerateWindow) => degenerate += 1,
                Err(e) => return Err(e),
            }
        }
        if !placed {
            abandoned += 1;
        }
    }
    if degenerate > 0 {
        warn!("resampled {degenerate} degenerate windows");
    }
    if abandoned > 0 {
        warn!("could only place {} of {count} windows", out.len());
    }
    Ok((out, abandoned))
}

/// Reads a `date,price` CSV. A non-numeric first line is taken as a header.
pub fn load_price_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut prices = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => prices.push(v),
            _ if lineno == 0 => continue,
            _ => {
                return Err(Error::schema(
                    "price",
                    format!("{}:{}: `{field}` is not a number", path.display(), lineno + 1),
                ))
            }
        }
    }
    Ok(prices)
}

/// Loads every `<company>_<daily|weekly>.csv` file in `dir`, sorted by file name.
pub fn load_price_dir(dir: &Path) -> Result<Vec<PriceSeries>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some((company, gran)) = stem.rsplit_once('_') else {
            warn!("skipping {}: expected <company>_<daily|weekly>.csv", path.display());
            continue;
        };
        let granularity = match gran.to_ascii_lowercase().as_str() {
            "daily" => Granularity::Daily,
            "weekly" => Granularity::Weekly,
            _ => {
                warn!("skipping {}: unknown granularity `{gran}`", path.display());
                continue;
            }
        };
        out.push(PriceSeries {
            company: company.to_string(),
            granularity,
            prices: load_price_csv(&path)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn endpoints_map_to_0_and_100() {
        let out = normalize_window(&[3.0, 5.0, 7.0], &[], &[]).unwrap();
        assert_eq!(out, vec![0.0, 50.0, 100.0]);
    }

    #[test]
    fn context_extends_the_range() {
        let ctx: Vec<f64> = (0..=8).map(f64::from).collect();
        let out = normalize_window(&[2.0, 4.0], &ctx[..5], &ctx[5..]).unwrap();
        assert_eq!(out, vec![25.0, 50.0]);
    }

    #[test]
    fn constant_window_is_degenerate() {
        assert!(matches!(
            normalize_window(&[4.0; 5], &[4.0], &[4.0]),
            Err(Error::DegenerateWindow)
        ));
    }

    proptest! {
        #[test]
        fn normalization_is_affine_invariant(
            vals in prop::collection::vec(-50.0f64..50.0, 14),
            alpha in 0.1f64..20.0,
            beta in -100.0f64..100.0,
        ) {
            let (w, rest) = vals.split_at(12);
            prop_assume!(vals.iter().any(|&v| (v - vals[0]).abs() > 1e-3));
            let a = normalize_window(w, &rest[..1], &rest[1..]).unwrap();
            let moved: Vec<f64> = vals.iter().map(|v| alpha * v + beta).collect();
            let (w2, rest2) = moved.split_at(12);
            let b = normalize_window(w2, &rest2[..1], &rest2[1..]).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-4);
            }
        }
    }

    fn synthetic_sources() -> Vec<PriceSeries> {
        let mk = |c: &str, g, n: usize, phase: f64| PriceSeries {
            company: c.into(),
            granularity: g,
            prices: (0..n).map(|i| 50.0 + 10.0 * ((i as f64) * 0.3 + phase).sin()).collect(),
        };
        vec![
            mk("acme", Granularity::Daily, 400, 0.0),
            mk("acme", Granularity::Weekly, 120, 1.0),
            mk("globex", Granularity::Daily, 300, 2.0),
        ]
    }

    #[test]
    fn windows_do_not_overlap_and_stay_in_range() {
        let sources = synthetic_sources();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (wins, _) = sample_stock_windows(&sources, 12, 40, &mut rng).unwrap();
        assert_eq!(wins.len(), 40);
        for (i, a) in wins.iter().enumerate() {
            assert!(a.series.iter().all(|v| (0.0..=100.0).contains(v)));
            for b in &wins[i + 1..] {
                if a.provenance.company == b.provenance.company
                    && a.provenance.granularity == b.provenance.granularity
                {
                    let (x, y) = (a.provenance.start, b.provenance.start);
                    assert!(x + 12 <= y || y + 12 <= x, "overlap {x} {y}");
                }
            }
        }
    }

    #[test]
    fn capacity_shortfall_is_reported() {
        let sources = vec![PriceSeries {
            company: "tiny".into(),
            granularity: Granularity::Daily,
            prices: (0..40).map(|i| (i % 7) as f64).collect(),
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (wins, abandoned) = sample_stock_windows(&sources, 12, 10, &mut rng).unwrap();
        assert!(wins.len() <= 3);
        assert_eq!(wins.len() + abandoned, 10);
    }

    #[test]
    fn short_source_is_rejected() {
        let sources = vec![PriceSeries {
            company: "x".into(),
            granularity: Granularity::Weekly,
            prices: vec![1.0; 20],
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_stock_windows(&sources, 12, 1, &mut rng).is_err());
    }

    #[test]
    fn csv_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("acme_weekly.csv");
        fs::write(&p, "date,price\n2020-01-01,10.5\n2020-01-08,11\n").unwrap();
        assert_eq!(load_price_csv(&p).unwrap(), vec![10.5, 11.0]);
        let all = load_price_dir(dir.path()).unwrap();
        assert_eq!(all[0].company, "acme");
        assert_eq!(all[0].granularity, Granularity::Weekly);
    }
}
