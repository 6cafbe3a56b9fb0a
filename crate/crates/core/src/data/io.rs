//! Line-delimited JSON dataset files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::Value;

use super::{PairedDataset, Record};
use crate::error::{Error, Result};

const REQUIRED: [&str; 5] = ["id", "series", "captions", "meta", "split"];

/// Reads a dataset file; the vocabulary is rebuilt from its train split.
pub fn load_dataset(path: &Path) -> Result<PairedDataset> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(line, lineno + 1)?);
    }
    Ok(PairedDataset::new(records))
}

fn parse_record(line: &str, lineno: usize) -> Result<Record> {
    let value: Value = serde_json::from_str(line)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::schema("<record>", format!("line {lineno}: not a JSON object")))?;
    for field in REQUIRED {
        if !obj.contains_key(field) {
            return Err(Error::schema(field, format!("line {lineno}: missing")));
        }
    }
    if let Some(extra) = obj.keys().find(|k| !REQUIRED.contains(&k.as_str())) {
        return Err(Error::schema(extra.clone(), format!("line {lineno}: unknown field")));
    }
    for field in REQUIRED {
        let check: std::result::Result<(), serde_json::Error> = match field {
            "id" => serde_json::from_value::<String>(obj[field].clone()).map(drop),
            "series" => serde_json::from_value::<Vec<f32>>(obj[field].clone()).map(drop),
            "captions" => serde_json::from_value::<Vec<String>>(obj[field].clone()).map(drop),
            "meta" => {
                serde_json::from_value::<Option<super::PatternMeta>>(obj[field].clone()).map(drop)
            }
            _ => serde_json::from_value::<super::Split>(obj[field].clone()).map(drop),
        };
        check.map_err(|e| Error::schema(field, format!("line {lineno}: {e}")))?;
    }
    let record: Record = serde_json::from_value(value)?;
    if record.series.is_empty() {
        return Err(Error::schema("series", format!("line {lineno}: empty")));
    }
    if record.captions.is_empty() {
        return Err(Error::schema("captions", format!("line {lineno}: empty")));
    }
    Ok(record)
}

/// Writes records one JSON object per line.
pub fn write_dataset<W: Write>(records: &[Record], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &PairedDataset, path: &Path) -> Result<()> {
    write_dataset(&dataset.records, BufWriter::new(File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synth_dataset, ALL_CLASSES};

    #[test]
    fn round_trip() {
        let ds = PairedDataset::new(gen_synth_dataset(30, 12, &ALL_CLASSES, 1).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save_dataset(&ds, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), ds);
    }

    #[test]
    fn missing_series_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(&p, r#"{"id":"a","captions":["x"],"meta":null,"split":"train"}"#).unwrap();
        match load_dataset(&p) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "series"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn bad_split_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(
            &p,
            r#"{"id":"a","series":[1],"captions":["x"],"meta":null,"split":"holdout"}"#,
        )
        .unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Schema { field, .. }) if field == "split"));
    }
}
