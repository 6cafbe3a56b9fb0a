//! Truth-conditional captioning for short time series.
//!
//! A program pairs a pattern module with a locate module. Each program scores
//! how true it is of a series, the scores define a prior over programs, and a
//! decoder conditioned only on the chosen program's embedding writes the
//! caption.

pub mod baselines;
pub mod captioner;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod lexicon;
pub mod modules;
pub mod numerics;
pub mod seq;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
