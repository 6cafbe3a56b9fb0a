use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::data::{split_words, Record};
use crate::error::{Error, Result};
use crate::lexicon::HeuristicLexicon;
use crate::seq::argmax;
use crate::trainer::TruceModel;

const STOPWORDS_FILE: &str = include_str!("../../data/stopwords.txt");

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS_FILE.lines().map(str::trim).filter(|w| !w.is_empty()).collect())
}

/// Which distribution picks the program an instance's words are attributed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordSource {
    /// Argmax of the prior on the series; all its captions go to that program.
    Prior,
    /// Argmax of the inference network on each caption.
    Inference,
}

impl fmt::Display for WordSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WordSource::Prior => "prior",
            WordSource::Inference => "inference",
        })
    }
}

impl FromStr for WordSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(WordSource::Prior),
            "inference" => Ok(WordSource::Inference),
            _ => Err(Error::invalid(format!("unknown word source `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleWords {
    /// `pattern` or `locate`.
    pub kind: String,
    pub index: usize,
    /// Keyword concept for anchored modules, otherwise `pattern3`-style.
    pub name: String,
    /// Words by descending count, ties alphabetical.
    pub words: Vec<(String, usize)>,
}

/// Most frequent non-stop-words attributed to each module.
pub fn module_word_table(
    model: &TruceModel,
    records: &[&Record],
    source: WordSource,
    top_k: usize,
) -> Result<Vec<ModuleWords>> {
    let m = &model.config.modules;
    let mut pattern: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); m.n_pattern];
    let mut locate: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); m.n_locate];
    let stop = stopwords();
    let mut attach = |z: usize, text: &str| {
        let (i, j) = model.space.split_program(z);
        for w in split_words(text) {
            if stop.contains(w.as_str()) || !w.chars().any(char::is_alphabetic) {
                continue;
            }
            *pattern[i].entry(w.clone()).or_insert(0) += 1;
            *locate[j].entry(w).or_insert(0) += 1;
        }
    };
    for r in records {
        match source {
            WordSource::Prior => {
                let z = argmax(&model.prior(&r.series)?);
                for c in &r.captions {
                    attach(z, c);
                }
            }
            WordSource::Inference => {
                for c in &r.captions {
                    let ids = model.vocab.encode(c)?.ids;
                    attach(argmax(&model.posterior(&ids)?), c);
                }
            }
        }
    }
    let lex = HeuristicLexicon::new(model.lexicon);
    let name = |kind: &str, idx: usize, names: &[&str]| match names.get(idx) {
        Some(n) if model.anchored => n.to_string(),
        _ => format!("{kind}{idx}"),
    };
    let rank = |counts: BTreeMap<String, usize>| {
        let mut v: Vec<(String, usize)> = counts.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.truncate(top_k);
        v
    };
    let mut out = Vec::new();
    for (i, c) in pattern.into_iter().enumerate() {
        out.push(ModuleWords {
            kind: "pattern".into(),
            index: i,
            name: name("pattern", i, lex.pattern_names()),
            words: rank(c),
        });
    }
    for (j, c) in locate.into_iter().enumerate() {
        out.push(ModuleWords {
            kind: "locate".into(),
            index: j,
            name: name("locate", j, lex.locate_names()),
            words: rank(c),
        });
    }
    Ok(out)
}
