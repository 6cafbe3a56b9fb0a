use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{oracle_parse, truth};
use crate::captioner::Captioner;
use crate::data::Record;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lexicon::HeuristicLexicon;

pub const DEFAULT_SAMPLES: usize = 12;
pub const DEFAULT_TOP_P: [f32; 5] = [0.3, 0.5, 0.7, 0.9, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub top_p: f32,
    /// Correct fraction over all `L * N` samples.
    pub correctness: f64,
    /// Fraction of reference captions whose class appears among the instance's samples.
    pub coverage: f64,
}

/// Samples `samples` captions per instance at each `top_p`. Instance `i` always
/// draws from stream `i` of `seed`, so smaller `samples` give a prefix of larger ones.
pub fn coverage_curve<C: Captioner + ?Sized>(
    model: &C,
    records: &[&Record],
    lexicon: &HeuristicLexicon,
    samples: usize,
    top_ps: &[f32],
    seed: u64,
    exec: Exec,
) -> Result<Vec<CoveragePoint>> {
    if samples == 0 {
        return Err(Error::invalid("need at least one sample per instance"));
    }
    if records.is_empty() {
        return Err(Error::invalid("no records to sample"));
    }
    let truth = truth(records)?;
    let indexed: Vec<(usize, &&Record)> = records.iter().enumerate().collect();
    top_ps
        .iter()
        .map(|&top_p| {
            let per = exec.map(&indexed, |&(i, r)| -> Result<(usize, usize, usize)> {
                let x = model.adapt(&r.series);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let mut classes = BTreeSet::new();
                let mut correct = 0;
                for _ in 0..samples {
                    let out = model.sample(&x, top_p, &mut rng)?;
                    if let Some(c) = oracle_parse(&out.text, lexicon) {
                        correct += usize::from(c == truth[i]);
                        classes.insert(c);
                    }
                }
                let covered = r
                    .captions
                    .iter()
                    .filter(|c| oracle_parse(c, lexicon).is_some_and(|k| classes.contains(&k)))
                    .count();
                Ok((correct, covered, r.captions.len()))
            });
            let (mut correct, mut covered, mut refs) = (0, 0, 0);
            for p in per {
                let (a, b, c) = p?;
                correct += a;
                covered += b;
                refs += c;
            }
            Ok(CoveragePoint {
                top_p,
                correctness: correct as f64 / (samples * records.len()) as f64,
                coverage: covered as f64 / refs.max(1) as f64,
            })
        })
        .collect()
}

/// Coverage (x) against correctness (y) for each system, as an SVG document.
pub fn coverage_svg(curves: &[(String, Vec<CoveragePoint>)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 48.0;
    const COLORS: [&str; 6] = ["#1b6ca8", "#d1495b", "#66a182", "#edae49", "#6a4c93", "#444444"];
    let px = |v: f64| M + v * (W - 2.0 * M);
    let py = |v: f64| H - M - v * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{} {} V{} H{}" fill="none" stroke="black"/>"#,
        px(0.0),
        py(1.0),
        py(0.0),
        px(1.0)
    );
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{v:.2}</text>"#, px(v), py(0.0) + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.2}</text>"#, px(0.0) - 6.0, py(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">coverage</text>"#, W / 2.0, H - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">correctness</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (k, (name, pts)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.1},{:.1}", px(p.coverage), py(p.correctness)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}"/>"#,
            path.join(" ")
        );
        for p in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"><title>top_p {}</title></circle>"#,
                px(p.coverage),
                py(p.correctness),
                p.top_p
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            W - M - 90.0,
            M + 16.0 * k as f64
        );
    }
    s.push_str("</svg>\n");
    s
}
