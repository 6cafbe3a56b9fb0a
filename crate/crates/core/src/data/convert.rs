//! Conversion of externally released corpora into canonical records.
//!
//! Accepted input: JSON arrays or line-delimited JSON objects. Field names are
//! matched from a small alias list because releases differ in naming. The
//! split comes from a `split` field or, failing that, the file name.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use super::{Record, Split};
use crate::error::{Error, Result};

const SERIES_KEYS: [&str; 5] = ["series", "values", "time_series", "data", "ts"];
const CAPTION_KEYS: [&str; 5] = ["captions", "annotations", "texts", "caption", "text"];
const ID_KEYS: [&str; 3] = ["id", "idx", "index"];

/// Converts each released file into records, one per input object.
pub fn convert_released(paths: &[&Path]) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path)?;
        let file_split = split_from_name(path);
        let objects = parse_objects(&text, path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("released");
        for (i, obj) in objects.iter().enumerate() {
            out.push(convert_one(obj, file_split, stem, i)?);
        }
    }
    Ok(out)
}

fn parse_objects(text: &str, path: &Path) -> Result<Vec<Map<String, Value>>> {
    let as_obj = |v: Value| match v {
        Value::Object(m) => Ok(m),
        _ => Err(Error::schema(
            "<record>",
            format!("{}: expected JSON objects", path.display()),
        )),
    };
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let arr: Vec<Value> = serde_json::from_str(trimmed)?;
        return arr.into_iter().map(as_obj).collect();
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| as_obj(serde_json::from_str(l)?))
        .collect()
}

fn split_from_name(path: &Path) -> Option<Split> {
    let name = path.file_name()?.to_str()?.to_ascii_lowercase();
    ["train", "test", "validation", "valid", "dev", "val"]
        .into_iter()
        .find(|s| name.contains(s))
        .and_then(|s| s.parse().ok())
}

fn find<'a>(obj: &'a Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(*k))
}

fn convert_one(
    obj: &Map<String, Value>,
    file_split: Option<Split>,
    stem: &str,
    index: usize,
) -> Result<Record> {
    let series_v = find(obj, &SERIES_KEYS)
        .ok_or_else(|| Error::schema("series", format!("record {index}: none of {SERIES_KEYS:?}")))?;
    let series = series_v
        .as_array()
        .ok_or_else(|| Error::schema("series", format!("record {index}: not an array")))?
        .iter()
        .map(|v| match v {
            Value::Number(n) => n.as_f64(),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        })
        .map(|v| v.map(|f| f as f32))
        .collect::<Option<Vec<f32>>>()
        .ok_or_else(|| Error::schema("series", format!("record {index}: non-numeric value")))?;

    let cap_v = find(obj, &CAPTION_KEYS).ok_or_else(|| {
        Error::schema("captions", format!("record {index}: none of {CAPTION_KEYS:?}"))
    })?;
    let captions: Vec<String> = match cap_v {
        Value::String(s) => vec![s.clone()],
        Value::Array(items) => items
            .iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect(),
        _ => Vec::new(),
    };
    if captions.is_empty() {
        return Err(Error::schema("captions", format!("record {index}: no caption strings")));
    }

    let id = match find(obj, &ID_KEYS) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => format!("{stem}-{index:05}"),
    };
    let split = match obj.get("split").and_then(Value::as_str) {
        Some(s) => s.parse().map_err(|_| Error::schema("split", format!("record {index}: `{s}`")))?,
        None => file_split.ok_or_else(|| {
            Error::schema("split", format!("record {index}: no split field or split in file name"))
        })?,
    };
    Ok(Record {
        id,
        series,
        captions,
        meta: None,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_instance_and_caption_counts() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("stock_train.json");
        fs::write(
            &train,
            r#"[{"values":[1,2,3],"annotations":["goes up","rises"]},
                {"values":["4","5","6"],"annotations":["a","b","c"]}]"#,
        )
        .unwrap();
        let test = dir.path().join("x.jsonl");
        fs::write(&test, "{\"idx\":7,\"ts\":[0.5],\"caption\":\"dips\",\"split\":\"val\"}\n").unwrap();
        let recs = convert_released(&[&train, &test]).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs.iter().map(|r| r.captions.len()).sum::<usize>(), 6);
        assert_eq!(recs[0].split, Split::Train);
        assert_eq!(recs[2].split, Split::Dev);
        assert_eq!(recs[2].id, "7");
        assert_eq!(recs[1].series, vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn missing_series_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.jsonl");
        fs::write(&p, "{\"captions\":[\"x\"]}\n").unwrap();
        assert!(matches!(
            convert_released(&[&p]),
            Err(Error::Schema { field, .. }) if field == "series"
        ));
    }
}
