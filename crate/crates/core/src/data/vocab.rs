use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

/// Captions are capped at nine words by annotation; sixteen ids leaves room for
/// punctuation and both sentinels.
pub const MAX_CAPTION_IDS: usize = 16;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token string <-> id map. Ids 0..4 are the sentinels; the rest are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Every token seen at least once in `captions`, plus the sentinels.
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = captions.into_iter().flat_map(split_words).collect();
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().filter(|w| !SPECIALS.contains(&w.as_str())))
            .collect::<Vec<_>>();
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= SPECIALS.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokenizes `text`, wrapping it in BOS/EOS and truncating to [`MAX_CAPTION_IDS`].
    pub fn encode(&self, text: &str) -> Result<CaptionTokens> {
        let words = split_words(text);
        if words.is_empty() {
            return Err(Error::invalid("empty caption"));
        }
        let mut ids = Vec::with_capacity(words.len().min(MAX_CAPTION_IDS - 2) + 2);
        ids.push(BOS);
        ids.extend(
            words
                .iter()
                .take(MAX_CAPTION_IDS - 2)
                .map(|w| self.id(w)),
        );
        ids.push(EOS);
        Ok(CaptionTokens {
            ids,
            text: text.to_string(),
        })
    }

    /// Renders ids back into a space-joined caption, dropping sentinels.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i != BOS && i != EOS && i != PAD)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A tokenized caption: `ids` starts with BOS and ends with EOS.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionTokens {
    pub ids: Vec<usize>,
    pub text: String,
}

impl CaptionTokens {
    /// Content tokens as strings (sentinels removed).
    pub fn words(&self) -> Vec<String> {
        split_words(&self.text)
    }

    pub fn from_ids(ids: Vec<usize>, vocab: &Vocabulary) -> Self {
        let text = vocab.decode(&ids);
        Self { ids, text }
    }
}

/// Lowercases and splits on whitespace; each punctuation character is its own token.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() && !ch.is_control() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}
