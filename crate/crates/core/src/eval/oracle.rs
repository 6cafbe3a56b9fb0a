use crate::captioner::Captioner;
use crate::data::{PatternClass, Record};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lexicon::HeuristicLexicon;

/// The (trend, location) a caption names, if it names exactly one of each.
pub fn oracle_parse(text: &str, lexicon: &HeuristicLexicon) -> Option<PatternClass> {
    lexicon.label(text).and_then(|l| lexicon.to_class(l))
}

/// Ground-truth class of every record; errors if any lacks metadata.
pub(crate) fn truth(records: &[&Record]) -> Result<Vec<PatternClass>> {
    records
        .iter()
        .map(|r| {
            r.meta
                .as_ref()
                .map(|m| m.class())
                .ok_or_else(|| Error::invalid(format!("record `{}` has no pattern metadata", r.id)))
        })
        .collect()
}

/// Per-instance greedy captions and whether each is judged correct.
pub fn judge_greedy<C: Captioner + ?Sized>(
    model: &C,
    records: &[&Record],
    lexicon: &HeuristicLexicon,
    exec: Exec,
) -> Result<Vec<(String, bool)>> {
    let truth = truth(records)?;
    let outs = exec.map(records, |r| model.caption(&model.adapt(&r.series)));
    outs.into_iter()
        .zip(truth)
        .map(|(o, t)| {
            let text = o?.text;
            let ok = oracle_parse(&text, lexicon) == Some(t);
            Ok((text, ok))
        })
        .collect()
}

/// Fraction of greedy captions whose parsed class matches the metadata.
pub fn correctness<C: Captioner + ?Sized>(
    model: &C,
    records: &[&Record],
    lexicon: &HeuristicLexicon,
    exec: Exec,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("no records to judge"));
    }
    let judged = judge_greedy(model, records, lexicon, exec)?;
    Ok(judged.iter().filter(|j| j.1).count() as f64 / judged.len() as f64)
}
