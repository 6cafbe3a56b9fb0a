//! Corpus-level caption metrics, computed in f64 over token lists.

use std::collections::HashMap;

/// Floor applied to each n-gram precision before taking logs.
pub const BLEU_FLOOR: f64 = 1e-9;

type Ngram<'a> = &'a [String];

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<Ngram<'_>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU with orders 1..=`max_n`, uniform weights and a brevity penalty
/// against the closest reference length (shorter wins ties).
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<Vec<String>>], max_n: usize) -> f64 {
    assert_eq!(candidates.len(), references.len(), "one reference set per candidate");
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        assert!(!refs.is_empty(), "every candidate needs a reference");
        cand_len += cand.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap();
        for n in 1..=max_n {
            let counts = ngram_counts(cand, n);
            let mut max_ref: HashMap<Ngram<'_>, usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            matched[n - 1] += counts
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            total[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 {
        return 0.0;
    }
    let log_p: f64 = (0..max_n)
        .map(|i| {
            let p = if total[i] == 0 { 0.0 } else { matched[i] as f64 / total[i] as f64 };
            p.max(BLEU_FLOOR).ln()
        })
        .sum::<f64>()
        / max_n as f64;
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    bp * log_p.exp()
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean over candidates of the best LCS F1 against any reference.
pub fn rouge_l(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> f64 {
    assert_eq!(candidates.len(), references.len(), "one reference set per candidate");
    if candidates.is_empty() {
        return 0.0;
    }
    let sum: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, refs)| {
            refs.iter()
                .map(|r| {
                    let l = lcs(c, r) as f64;
                    if l == 0.0 {
                        return 0.0;
                    }
                    let p = l / c.len() as f64;
                    let rc = l / r.len() as f64;
                    2.0 * p * rc / (p + rc)
                })
                .fold(0.0, f64::max)
        })
        .sum();
    sum / candidates.len() as f64
}

/// CIDEr with orders 1..=4: tf-idf n-gram vectors, document frequency counted
/// over reference sets, cosine similarity averaged over references, orders
/// weighted equally, scaled by 10.
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> f64 {
    assert_eq!(candidates.len(), references.len(), "one reference set per candidate");
    let n_docs = candidates.len();
    if n_docs == 0 {
        return 0.0;
    }
    let log_n = (n_docs as f64).ln();
    let mut score = 0.0;
    for n in 1..=4 {
        let mut df: HashMap<Ngram<'_>, usize> = HashMap::new();
        for refs in references {
            let mut seen: Vec<Ngram<'_>> = refs.iter().flat_map(|r| ngram_counts(r, n).into_keys()).collect();
            seen.sort_unstable();
            seen.dedup();
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let vector = |tokens: &[String]| -> HashMap<Vec<String>, f64> {
            ngram_counts(tokens, n)
                .into_iter()
                .map(|(g, c)| {
                    let idf = log_n - (df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
                    (g.to_vec(), c as f64 * idf)
                })
                .collect()
        };
        let mut order_sum = 0.0;
        for (cand, refs) in candidates.iter().zip(references) {
            let vc = vector(cand);
            let sims: f64 = refs.iter().map(|r| cosine(&vc, &vector(r))).sum();
            order_sum += sims / refs.len() as f64;
        }
        score += 0.25 * order_sum / n_docs as f64;
    }
    10.0 * score
}

fn cosine(a: &HashMap<Vec<String>, f64>, b: &HashMap<Vec<String>, f64>) -> f64 {
    let dot: f64 = a.iter().map(|(g, v)| v * b.get(g).copied().unwrap_or(0.0)).sum();
    let na = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `exp(-total_loglik / tokens)`.
pub fn perplexity(total_loglik: f64, tokens: usize) -> f64 {
    if tokens == 0 {
        return f64::NAN;
    }
    (-total_loglik / tokens as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn bleu_identical_is_one() {
        let c = vec![t("the price rises at the end")];
        let r = vec![vec![t("the price rises at the end"), t("something else")]];
        assert!((bleu(&c, &r, 4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_brevity_example() {
        let v = bleu(&[t("the cat sat")], &[vec![t("the cat sat down")]], 1);
        assert!((v - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-12);
        assert!((v - 0.7165).abs() < 1e-4);
    }

    #[test]
    fn bleu_disjoint_is_floor() {
        let v = bleu(&[t("a b c")], &[vec![t("x y z")]], 4);
        assert!(v < 1e-8);
    }

    #[test]
    fn empty_candidate_is_zero_not_panic() {
        assert_eq!(bleu(&[vec![]], &[vec![t("x")]], 4), 0.0);
        assert_eq!(rouge_l(&[vec![]], &[vec![t("x")]]), 0.0);
    }

    #[test]
    fn rouge_identical_is_one() {
        assert_eq!(rouge_l(&[t("rises at the end")], &[vec![t("rises at the end")]]), 1.0);
    }

    #[test]
    fn perplexity_of_uniform_model_is_vocab_size() {
        let v = 37.0f64;
        let tokens = 50;
        assert!((perplexity(tokens as f64 * -(v.ln()), tokens) - v).abs() < 1e-9);
    }
}
