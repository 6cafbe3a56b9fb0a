//! Keyword lexicons that tag captions with pattern and locate concepts.
//!
//! A keyword is a sequence of lowercase stems; it matches consecutive caption
//! words that start with those stems. Concept `k` of each kind is anchored to
//! module instance `k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{split_words, Location, Trend};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LexiconKind {
    /// Short keyword list for stock-market captions.
    Stock,
    /// Adds the synonyms used by the synthetic template captions.
    Synth,
}

impl fmt::Display for LexiconKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LexiconKind::Stock => "stock",
            LexiconKind::Synth => "synth",
        })
    }
}

impl FromStr for LexiconKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stock" => Ok(LexiconKind::Stock),
            "synth" => Ok(LexiconKind::Synth),
            _ => Err(Error::invalid(format!("unknown lexicon `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Pattern,
    Locate,
}

#[derive(Clone, Debug)]
struct Keyword {
    stems: Vec<&'static str>,
    slot: Slot,
    concept: usize,
}

#[derive(Clone, Debug)]
pub struct HeuristicLexicon {
    kind: LexiconKind,
    pattern_names: Vec<&'static str>,
    locate_names: Vec<&'static str>,
    keywords: Vec<Keyword>,
}

/// Concepts found in one caption, deduplicated and sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Detection {
    pub patterns: Vec<usize>,
    pub locates: Vec<usize>,
}

impl HeuristicLexicon {
    pub fn new(kind: LexiconKind) -> Self {
        match kind {
            LexiconKind::Stock => Self::stock(),
            LexiconKind::Synth => Self::synth(),
        }
    }

    pub fn stock() -> Self {
        let pattern = [
            ("increase", &["increas"][..]),
            ("decrease", &["decreas"]),
            ("peak", &["peak"]),
            ("flat", &["flat"]),
            ("dip", &["dip"]),
        ];
        let locate = [
            ("begin", &["begin"][..]),
            ("middle", &["middle"]),
            ("end", &["end"]),
            ("throughout", &["throughout"]),
        ];
        Self::build(LexiconKind::Stock, &pattern, &locate)
    }

    pub fn synth() -> Self {
        let pattern = [
            ("increase", &["increas", "rise", "rising", "go up"][..]),
            ("decrease", &["decreas", "declin", "dip", "go down"]),
            ("peak", &["peak"]),
            ("flat", &["flat"]),
        ];
        let locate = [
            ("begin", &["begin", "start", "early"][..]),
            ("middle", &["middle", "halfway"]),
            ("end", &["end", "late"]),
            ("throughout", &["throughout"]),
        ];
        Self::build(LexiconKind::Synth, &pattern, &locate)
    }

    fn build(
        kind: LexiconKind,
        pattern: &[(&'static str, &[&'static str])],
        locate: &[(&'static str, &[&'static str])],
    ) -> Self {
        let mut keywords = Vec::new();
        for (slot, list) in [(Slot::Pattern, pattern), (Slot::Locate, locate)] {
            for (concept, (_, phrases)) in list.iter().enumerate() {
                for p in *phrases {
                    keywords.push(Keyword {
                        stems: p.split_whitespace().collect(),
                        slot,
                        concept,
                    });
                }
            }
        }
        Self {
            kind,
            pattern_names: pattern.iter().map(|p| p.0).collect(),
            locate_names: locate.iter().map(|l| l.0).collect(),
            keywords,
        }
    }

    pub fn kind(&self) -> LexiconKind {
        self.kind
    }

    pub fn pattern_names(&self) -> &[&'static str] {
        &self.pattern_names
    }

    pub fn locate_names(&self) -> &[&'static str] {
        &self.locate_names
    }

    /// Fails when some concept would anchor to a module instance that does not exist.
    pub fn check_instances(&self, n_pattern: usize, n_locate: usize) -> Result<()> {
        if self.pattern_names.len() > n_pattern || self.locate_names.len() > n_locate {
            return Err(Error::invalid(format!(
                "{} lexicon needs at least {} pattern and {} locate instances, got {n_pattern} and {n_locate}",
                self.kind,
                self.pattern_names.len(),
                self.locate_names.len()
            )));
        }
        Ok(())
    }

    pub fn detect(&self, text: &str) -> Detection {
        self.detect_words(&split_words(text))
    }

    pub fn detect_words<S: AsRef<str>>(&self, words: &[S]) -> Detection {
        let mut d = Detection::default();
        for start in 0..words.len() {
            for kw in &self.keywords {
                let n = kw.stems.len();
                if start + n > words.len() {
                    continue;
                }
                let hit = kw
                    .stems
                    .iter()
                    .zip(&words[start..start + n])
                    .all(|(stem, w)| w.as_ref().starts_with(stem));
                if hit {
                    match kw.slot {
                        Slot::Pattern => d.patterns.push(kw.concept),
                        Slot::Locate => d.locates.push(kw.concept),
                    }
                }
            }
        }
        for v in [&mut d.patterns, &mut d.locates] {
            v.sort_unstable();
            v.dedup();
        }
        d
    }

    /// `(pattern concept, locate concept)` when exactly one of each is present.
    pub fn label(&self, text: &str) -> Option<(usize, usize)> {
        let d = self.detect(text);
        match (d.patterns.as_slice(), d.locates.as_slice()) {
            ([p], [l]) => Some((*p, *l)),
            _ => None,
        }
    }

    /// The anchored program id for a caption, given `n_locate` locate instances.
    pub fn program(&self, text: &str, n_locate: usize) -> Option<usize> {
        self.label(text).map(|(p, l)| p * n_locate + l)
    }

    pub fn concept_pattern(&self, trend: Trend) -> usize {
        match trend {
            Trend::Increase => 0,
            Trend::Decrease => 1,
        }
    }

    pub fn concept_locate(&self, location: Location) -> usize {
        match location {
            Location::Begin => 0,
            Location::Middle => 1,
            Location::End => 2,
        }
    }

    /// Maps a tagged caption to a synthetic class, if the concepts have one.
    pub fn to_class(&self, label: (usize, usize)) -> Option<(Trend, Location)> {
        let trend = match label.0 {
            0 => Trend::Increase,
            1 => Trend::Decrease,
            _ => return None,
        };
        let loc = match label.1 {
            0 => Location::Begin,
            1 => Location::Middle,
            2 => Location::End,
            _ => return None,
        };
        Some((trend, loc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_one_of_each() {
        let lex = HeuristicLexicon::stock();
        assert_eq!(lex.label("Increases at the beginning"), Some((0, 0)));
        assert_eq!(lex.label("increases then decreases"), None);
        assert_eq!(lex.label("stock is volatile"), None);
        assert_eq!(lex.label("dip in the middle, dip again"), Some((4, 1)));
    }

    #[test]
    fn multi_word_keywords() {
        let lex = HeuristicLexicon::synth();
        assert_eq!(lex.label("the series goes up late"), Some((0, 2)));
        assert_eq!(lex.label("up and going"), None);
    }

    #[test]
    fn stems_only_match_word_starts() {
        let lex = HeuristicLexicon::stock();
        assert!(lex.detect("trend").locates.is_empty());
        assert_eq!(lex.detect("ending").locates, vec![2]);
    }

    #[test]
    fn instance_check() {
        assert!(HeuristicLexicon::stock().check_instances(6, 4).is_ok());
        assert!(HeuristicLexicon::stock().check_instances(4, 4).is_err());
    }
}
