//! Comparison systems: neural encoders sharing the caption decoder, and
//! nearest-neighbour retrieval.

mod encoders;
mod model;
mod nearnbr;

pub use encoders::{
    adapt_length, fft_feature_len, fft_features, subsample_alternate, Encoder, EncoderConfig, EncoderKind,
};
pub use model::{
    parity_width, train_baseline, truce_prediction_params, BaselineConfig, BaselineModel, BaselineOutcome,
    PARITY_TOLERANCE,
};
pub use nearnbr::NearNbr;
