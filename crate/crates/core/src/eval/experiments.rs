use crate::captioner::Captioner;
use crate::data::{gen_synth_dataset, PairedDataset, Record, ALL_CLASSES, HOLDOUT_CLASSES, HOLDOUT_TRAIN_CLASSES};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lexicon::HeuristicLexicon;
use crate::seq::argmax;
use crate::trainer::TruceModel;

use super::oracle::{correctness, truth};

/// Series length used to test transfer to longer inputs.
pub const TRANSFER_LEN: usize = 24;
pub const TRANSFER_COUNT: usize = 100;

/// Training corpus over the four seen compositions and a test set of the two
/// held-out ones.
pub fn composition_datasets(n_train: usize, n_test: usize, t: usize, seed: u64) -> Result<(PairedDataset, Vec<Record>)> {
    let train = gen_synth_dataset(n_train, t, &HOLDOUT_TRAIN_CLASSES, seed)?;
    let test = gen_synth_dataset(n_test, t, &HOLDOUT_CLASSES, seed.wrapping_add(1))?;
    Ok((PairedDataset::new(train), test))
}

/// Fraction of records whose argmax-prior program is the one built from the
/// keyword-anchored modules for its trend and location.
pub fn composition_eval(model: &TruceModel, records: &[&Record]) -> Result<f64> {
    if !model.anchored {
        return Err(Error::invalid(
            "composition accuracy needs keyword-anchored modules; train with the auxiliary loss",
        ));
    }
    if records.is_empty() {
        return Err(Error::invalid("no records to evaluate"));
    }
    let lex = HeuristicLexicon::new(model.lexicon);
    let truth = truth(records)?;
    let mut hits = 0;
    for (r, (trend, location)) in records.iter().zip(truth) {
        let z = model
            .space
            .program_id(lex.concept_pattern(trend), lex.concept_locate(location));
        hits += usize::from(argmax(&model.scores(&r.series)?) == z);
    }
    Ok(hits as f64 / records.len() as f64)
}

/// A fresh synthetic set at twice the training length.
pub fn transfer_dataset(seed: u64) -> Result<Vec<Record>> {
    gen_synth_dataset(TRANSFER_COUNT, TRANSFER_LEN, &ALL_CLASSES, seed)
}

/// Correctness on longer series without retraining; fixed-width systems see
/// alternate values.
pub fn length_transfer_eval<C: Captioner + ?Sized>(
    model: &C,
    records: &[&Record],
    lexicon: &HeuristicLexicon,
    exec: Exec,
) -> Result<f64> {
    correctness(model, records, lexicon, exec)
}
