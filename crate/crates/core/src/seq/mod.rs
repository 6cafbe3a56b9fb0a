//! Caption decoder, caption-side inference network and sampling.

mod decoder;
mod inference;
mod lstm;
mod sample;

pub use decoder::{Decoder, DecoderConfig};
pub use inference::{InferenceConfig, InferenceNet};
pub use lstm::Lstm;
pub use sample::{argmax, nucleus, sample_index, DecodeMode, SampleConfig};
