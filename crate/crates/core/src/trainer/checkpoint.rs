//! Checkpoint files: a magic line, a length-prefixed JSON manifest, then named
//! tensors as raw little-endian f32.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use super::model::TruceModel;
use crate::baselines::{BaselineConfig, BaselineModel, EncoderConfig, NearNbr};
use crate::captioner::Captioner;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::lexicon::LexiconKind;
use crate::numerics::{ParamStore, Tensor};
use crate::seq::DecoderConfig;

pub const MAGIC: &[u8] = b"TRUCE-CHECKPOINT\n";
pub const FORMAT_VERSION: u32 = 1;

/// What kind of system a checkpoint holds and how to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Truce {
        train: TrainConfig,
        /// Network sizes with the selected prior temperature.
        model: ModelConfig,
        direct: bool,
        anchored: bool,
    },
    Baseline {
        train: BaselineConfig,
        encoder: EncoderConfig,
        decoder: DecoderConfig,
        n_programs: usize,
        n_locate: usize,
        /// Classification weight of the selected run.
        w_cls: f32,
    },
    Nearnbr {
        seed: u64,
        train_len: usize,
        captions: Vec<Vec<String>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub lexicon: LexiconKind,
    pub vocab: Vocabulary,
    pub model: ModelSpec,
}

/// A manifest plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub store: ParamStore,
}

/// Any system restored from a checkpoint.
#[derive(Clone, Debug)]
pub enum LoadedModel {
    Truce(TruceModel),
    Baseline(BaselineModel),
    NearNbr(NearNbr),
}

impl LoadedModel {
    pub fn captioner(&self) -> &dyn Captioner {
        match self {
            LoadedModel::Truce(m) => m,
            LoadedModel::Baseline(m) => m,
            LoadedModel::NearNbr(m) => m,
        }
    }
}

fn manifest(lexicon: LexiconKind, vocab: &Vocabulary, model: ModelSpec) -> Manifest {
    Manifest {
        format_version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        lexicon,
        vocab: vocab.clone(),
        model,
    }
}

impl Checkpoint {
    pub fn from_truce(m: &TruceModel, train: &TrainConfig) -> Self {
        let spec = ModelSpec::Truce {
            train: train.clone(),
            model: m.config.clone(),
            direct: m.direct,
            anchored: m.anchored,
        };
        Self {
            manifest: manifest(m.lexicon, &m.vocab, spec),
            store: m.store.clone(),
        }
    }

    pub fn from_baseline(m: &BaselineModel, train: &BaselineConfig) -> Self {
        let spec = ModelSpec::Baseline {
            train: train.clone(),
            encoder: m.encoder.config.clone(),
            decoder: train.train.model.decoder.clone(),
            n_programs: m.n_programs,
            n_locate: m.n_locate,
            w_cls: m.w_cls,
        };
        Self {
            manifest: manifest(m.lexicon, &m.vocab, spec),
            store: m.store.clone(),
        }
    }

    pub fn from_nearnbr(m: &NearNbr) -> Self {
        let mut store = ParamStore::new();
        store.add("nn.series", m.series_tensor());
        let spec = ModelSpec::Nearnbr {
            seed: m.seed,
            train_len: m.train_len,
            captions: m.captions.clone(),
        };
        Self {
            manifest: manifest(LexiconKind::Synth, &m.vocab, spec),
            store,
        }
    }

    pub fn into_model(self) -> Result<LoadedModel> {
        let Manifest {
            lexicon, vocab, model, ..
        } = self.manifest;
        Ok(match model {
            ModelSpec::Truce {
                model,
                direct,
                anchored,
                ..
            } => LoadedModel::Truce(TruceModel::from_store(model, direct, lexicon, anchored, vocab, self.store)?),
            ModelSpec::Baseline {
                encoder,
                n_programs,
                n_locate,
                w_cls,
                ..
            } => LoadedModel::Baseline(BaselineModel::from_store(
                encoder, n_programs, n_locate, w_cls, lexicon, vocab, self.store,
            )?),
            ModelSpec::Nearnbr {
                seed,
                train_len,
                captions,
            } => {
                let id = self
                    .store
                    .id("nn.series")
                    .ok_or_else(|| Error::Checkpoint("missing tensor `nn.series`".into()))?;
                let t = self.store.get(id);
                if t.shape().len() != 2 || t.cols() != train_len || t.rows() != captions.len() {
                    return Err(Error::Checkpoint("neighbour table does not match manifest".into()));
                }
                let series = (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect();
                LoadedModel::NearNbr(NearNbr::from_parts(series, captions, seed, vocab)?)
            }
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec_pretty(&self.manifest)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.push(b'\n');
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for (name, t) in self.store.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let json = r.take(len)?;
        let value: serde_json::Value = serde_json::from_slice(json)?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Checkpoint("manifest lacks `format_version`".into()))?;
        if found != FORMAT_VERSION as u64 {
            return Err(Error::Version {
                found: found as u32,
                expected: FORMAT_VERSION,
            });
        }
        let manifest: Manifest = serde_json::from_value(value)?;
        if r.take(1)? != b"\n" {
            return Err(Error::Checkpoint("manifest not terminated".into()));
        }
        let n = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            if store.id(&name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.add(name, Tensor::new(shape, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Self { manifest, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
