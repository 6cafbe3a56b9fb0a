//! Paired series/caption corpora: synthetic generation, stock-window ingestion,
//! tokenization and the line-delimited JSON dataset format.

mod convert;
mod io;
mod stock;
mod synth;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use convert::convert_released;
pub use io::{load_dataset, save_dataset, write_dataset};
pub use stock::{
    load_price_csv, load_price_dir, normalize_window, sample_stock_windows, Granularity,
    PriceSeries, Provenance, WindowSample, CONTEXT_VALUES,
};
pub use synth::{
    gen_synth_caption, gen_synth_dataset, gen_synth_series, placement_window, ALL_CLASSES,
    HOLDOUT_CLASSES, HOLDOUT_TRAIN_CLASSES, LOCATION_PHRASES, TEMPLATE_FRAMES, TREND_SYNONYMS,
};
#[cfg(test)]
pub(crate) use synth::draw_clean;
pub use vocab::{split_words, CaptionTokens, Vocabulary, BOS, EOS, MAX_CAPTION_IDS, PAD, UNK};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Increase,
    Decrease,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Begin,
    Middle,
    End,
}

/// A synthetic pattern class.
pub type PatternClass = (Trend, Location);

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trend::Increase => "increase",
            Trend::Decrease => "decrease",
        })
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Location::Begin => "begin",
            Location::Middle => "middle",
            Location::End => "end",
        })
    }
}

impl FromStr for Trend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "increase" | "inc" => Ok(Trend::Increase),
            "decrease" | "dec" => Ok(Trend::Decrease),
            _ => Err(Error::invalid(format!("unknown trend `{s}`"))),
        }
    }
}

impl FromStr for Location {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "begin" | "beginning" => Ok(Location::Begin),
            "middle" => Ok(Location::Middle),
            "end" => Ok(Location::End),
            _ => Err(Error::invalid(format!("unknown location `{s}`"))),
        }
    }
}

/// Parses `increase-begin` style class names.
pub fn parse_class(s: &str) -> Result<PatternClass> {
    let (t, l) = s
        .split_once(['-', ':', '_'])
        .ok_or_else(|| Error::invalid(format!("class `{s}` is not `trend-location`")))?;
    Ok((t.parse()?, l.parse()?))
}

/// Ground truth for a synthetic series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternMeta {
    pub trend: Trend,
    pub location: Location,
    /// First index of the trend segment.
    pub start: usize,
    /// Segment length.
    pub length: usize,
    /// Signed slope: positive for increases.
    pub slope: f32,
    pub intercept: f32,
}

impl PatternMeta {
    pub fn class(&self) -> PatternClass {
        (self.trend, self.location)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "val" | "valid" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

/// One series with its captions, as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub series: Vec<f32>,
    pub captions: Vec<String>,
    pub meta: Option<PatternMeta>,
    pub split: Split,
}

/// Records plus the vocabulary derived from their train split.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub records: Vec<Record>,
    pub vocab: Vocabulary,
}

impl PairedDataset {
    pub fn new(records: Vec<Record>) -> Self {
        let vocab = Vocabulary::build(
            records
                .iter()
                .filter(|r| r.split == Split::Train)
                .flat_map(|r| r.captions.iter().map(String::as_str)),
        );
        Self { records, vocab }
    }

    pub fn split(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Length of the series, if all records share one.
    pub fn series_len(&self) -> Option<usize> {
        let t = self.records.first()?.series.len();
        self.records.iter().all(|r| r.series.len() == t).then_some(t)
    }

    pub fn has_meta(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.meta.is_some())
    }
}

/// Assigns train/dev/test in 8:1:1 proportion to `n` items, given a permutation.
pub(crate) fn split_for_rank(rank: usize, n: usize) -> Split {
    let train = (n * 8 + 5) / 10;
    let dev = (n * 9 + 5) / 10;
    if rank < train {
        Split::Train
    } else if rank < dev {
        Split::Dev
    } else {
        Split::Test
    }
}
