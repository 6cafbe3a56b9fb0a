use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{bleu, cider, perplexity, rouge_l};
use super::oracle::oracle_parse;
use crate::captioner::Captioner;
use crate::data::{split_words, Record};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lexicon::HeuristicLexicon;

/// Footer written with every report.
pub const CIDER_NOTE: &str = "cider: plain tf-idf cosine over 1..4-grams, no length penalty, averaged over orders and scaled by 10";
pub const STOCK_NOTE: &str = "correctness: not machine-checkable without pattern metadata";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub caption: String,
    pub program: Option<usize>,
    /// Oracle verdict; absent when the record has no metadata.
    pub correct: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub system: String,
    pub instances: usize,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    /// Absent for systems without a likelihood.
    pub perplexity: Option<f64>,
    /// Absent when some record lacks metadata.
    pub correctness: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub summary: MetricSummary,
    pub instances: Vec<InstanceRecord>,
    pub notes: Vec<String>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line<'a, C: Serialize> {
    Config { config: &'a C },
    Summary(&'a MetricSummary),
    Instance(&'a InstanceRecord),
    Note { text: &'a str },
}

impl MetricReport {
    /// Line-delimited JSON: the config, the summary, one line per instance, then notes.
    pub fn write_jsonl<C: Serialize, W: Write>(&self, config: &C, mut w: W) -> Result<()> {
        let mut put = |line: &Line<'_, C>| -> Result<()> {
            serde_json::to_writer(&mut w, line)?;
            w.write_all(b"\n")?;
            Ok(())
        };
        put(&Line::Config { config })?;
        put(&Line::Summary(&self.summary))?;
        for i in &self.instances {
            put(&Line::Instance(i))?;
        }
        for n in &self.notes {
            put(&Line::Note { text: n })?;
        }
        Ok(())
    }
}

/// Greedy captions for `records` scored against their references.
pub fn evaluate<C: Captioner + ?Sized>(
    model: &C,
    records: &[&Record],
    lexicon: &HeuristicLexicon,
    exec: Exec,
) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::invalid("no records to evaluate"));
    }
    let outs = exec.map(records, |r| model.caption(&model.adapt(&r.series)));
    let outs = outs.into_iter().collect::<Result<Vec<_>>>()?;
    let liks = exec.map(records, |r| -> Result<Option<(f64, usize)>> {
        let x = model.adapt(&r.series);
        let mut total = 0.0;
        let mut tokens = 0;
        for c in &r.captions {
            let ids = model.vocab().encode(c)?.ids;
            match model.loglik(&x, &ids)? {
                Some(l) => total += l,
                None => return Ok(None),
            }
            tokens += ids.len() - 1;
        }
        Ok(Some((total, tokens)))
    });
    let mut lik = Some((0.0, 0));
    for l in liks {
        lik = match (lik, l?) {
            (Some((a, n)), Some((b, m))) => Some((a + b, n + m)),
            _ => None,
        };
    }

    let cands: Vec<Vec<String>> = outs.iter().map(|o| split_words(&o.text)).collect();
    let refs: Vec<Vec<Vec<String>>> = records
        .iter()
        .map(|r| r.captions.iter().map(|c| split_words(c)).collect())
        .collect();
    let has_meta = records.iter().all(|r| r.meta.is_some());
    let instances: Vec<InstanceRecord> = records
        .iter()
        .zip(&outs)
        .map(|(r, o)| InstanceRecord {
            id: r.id.clone(),
            caption: o.text.clone(),
            program: o.program,
            correct: r
                .meta
                .as_ref()
                .map(|m| oracle_parse(&o.text, lexicon) == Some(m.class())),
        })
        .collect();
    let correctness = has_meta.then(|| {
        instances.iter().filter(|i| i.correct == Some(true)).count() as f64 / instances.len() as f64
    });
    let mut notes = vec![CIDER_NOTE.to_string()];
    if !has_meta {
        notes.push(STOCK_NOTE.to_string());
    }
    Ok(MetricReport {
        summary: MetricSummary {
            system: model.name(),
            instances: records.len(),
            bleu3: bleu(&cands, &refs, 3),
            bleu4: bleu(&cands, &refs, 4),
            rouge_l: rouge_l(&cands, &refs),
            cider: cider(&cands, &refs),
            perplexity: lik.map(|(l, n)| perplexity(l, n)),
            correctness,
        },
        instances,
        notes,
    })
}
