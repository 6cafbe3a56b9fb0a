use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::encoders::adapt_length;
use crate::captioner::{CaptionOutput, Captioner};
use crate::data::{PairedDataset, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Retrieval baseline: the caption of the closest training series under L2.
#[derive(Clone, Debug)]
pub struct NearNbr {
    pub(crate) series: Vec<Vec<f32>>,
    pub(crate) captions: Vec<Vec<String>>,
    pub seed: u64,
    pub train_len: usize,
    pub(crate) vocab: Vocabulary,
}

impl NearNbr {
    pub fn new(ds: &PairedDataset, seed: u64) -> Result<Self> {
        let train = ds.split(Split::Train);
        let series = train.iter().map(|r| r.series.clone()).collect();
        let captions = train.iter().map(|r| r.captions.clone()).collect();
        Self::from_parts(series, captions, seed, ds.vocab.clone())
    }

    pub fn from_parts(
        series: Vec<Vec<f32>>,
        captions: Vec<Vec<String>>,
        seed: u64,
        vocab: Vocabulary,
    ) -> Result<Self> {
        let Some(first) = series.first() else {
            return Err(Error::invalid("nearest neighbour needs a nonempty train set"));
        };
        let train_len = first.len();
        if series.iter().any(|s| s.len() != train_len) || series.len() != captions.len() {
            return Err(Error::invalid("train series must share one length and have captions"));
        }
        if captions.iter().any(|c| c.is_empty()) {
            return Err(Error::invalid("every train series needs a caption"));
        }
        Ok(Self {
            series,
            captions,
            seed,
            train_len,
            vocab,
        })
    }

    /// Index of the closest training series; ties go to the lowest index.
    pub fn nearest(&self, x: &[f32]) -> Result<usize> {
        let x = adapt_length(x, self.train_len);
        if x.len() != self.train_len {
            return Err(Error::invalid(format!(
                "nearest neighbour expects length {} or {}, got {}",
                self.train_len,
                2 * self.train_len,
                x.len()
            )));
        }
        let mut best = (0, f64::INFINITY);
        for (i, s) in self.series.iter().enumerate() {
            let d: f64 = s.iter().zip(&x).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(best.0)
    }

    fn output(&self, i: usize, rng: &mut ChaCha8Rng) -> Result<CaptionOutput> {
        let caps = &self.captions[i];
        let text = caps[rng.gen_range(0..caps.len())].clone();
        let ids = self.vocab.encode(&text)?.ids;
        Ok(CaptionOutput {
            ids,
            text,
            program: None,
            score: None,
        })
    }

    pub(crate) fn series_tensor(&self) -> Tensor {
        let data = self.series.iter().flatten().copied().collect();
        Tensor::matrix(self.series.len(), self.train_len, data)
    }
}

impl Captioner for NearNbr {
    fn name(&self) -> String {
        "nearnbr".into()
    }

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// The caption choice depends only on the seed and the neighbour index.
    fn caption(&self, x: &[f32]) -> Result<CaptionOutput> {
        let i = self.nearest(x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64);
        self.output(i, &mut rng)
    }

    fn sample(&self, x: &[f32], _top_p: f32, rng: &mut ChaCha8Rng) -> Result<CaptionOutput> {
        let i = self.nearest(x)?;
        self.output(i, rng)
    }

    fn loglik(&self, _x: &[f32], _ids: &[usize]) -> Result<Option<f64>> {
        Ok(None)
    }

    fn adapt(&self, x: &[f32]) -> Vec<f32> {
        adapt_length(x, self.train_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nn() -> NearNbr {
        let series = vec![vec![0.0, 0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0, 1.0]];
        let captions = vec![
            vec!["flat low".to_string()],
            vec!["flat high".to_string(), "flat up high".to_string()],
            vec!["other".to_string()],
        ];
        let vocab = Vocabulary::build(captions.iter().flatten().map(String::as_str));
        NearNbr::from_parts(series, captions, 3, vocab).unwrap()
    }

    #[test]
    fn training_series_retrieves_itself() {
        let m = nn();
        assert_eq!(m.nearest(&[0.0, 0.0, 0.0, 0.0]).unwrap(), 0);
        assert_eq!(m.caption(&[0.0; 4]).unwrap().text, "flat low");
    }

    #[test]
    fn ties_go_to_lowest_index_and_are_deterministic() {
        let m = nn();
        assert_eq!(m.nearest(&[1.0; 4]).unwrap(), 1);
        let a = m.caption(&[0.9; 4]).unwrap();
        let b = m.caption(&[0.9; 4]).unwrap();
        assert_eq!(a, b);
        assert!(m.captions[1].contains(&a.text));
    }

    #[test]
    fn double_length_query_uses_alternate_values() {
        let m = nn();
        let q = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        assert_eq!(m.nearest(&q).unwrap(), 1);
        assert!(m.nearest(&[0.0; 5]).is_err());
    }
}
