//! JSONL and CSV datasets with `text` and `label` fields.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use promptgrad_core::prompt::LabeledExample;
use promptgrad_core::tasks::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" => Some(Format::Jsonl),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }
}

fn ingest(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string()
}

fn example(path: &Path, line: usize, text: Option<String>, label: Option<String>) -> Result<LabeledExample> {
    let text = text.ok_or_else(|| ingest(path, line, "missing field `text`"))?;
    let label = label.ok_or_else(|| ingest(path, line, "missing field `label`"))?;
    LabeledExample::new(text, label).map_err(|e| ingest(path, line, e.to_string()))
}

/// Load a dataset, inferring the format from the extension when `format` is
/// `None`.
pub fn load_dataset(path: &Path, format: Option<Format>) -> Result<Dataset> {
    let format = format
        .or_else(|| Format::from_path(path))
        .ok_or_else(|| Error::Config(format!("{}: cannot tell the dataset format", path.display())))?;
    // An unreadable input file is an ingestion failure, not a runtime one.
    let raw = fs::read_to_string(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let examples = match format {
        Format::Jsonl => parse_jsonl(path, &raw)?,
        Format::Csv => parse_csv(path, &raw)?,
    };
    if examples.is_empty() {
        return Err(ingest(path, 0, "no records"));
    }
    Ok(Dataset::new(&dataset_name(path), examples)?)
}

fn parse_jsonl(path: &Path, raw: &str) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| ingest(path, n, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| ingest(path, n, "record is not an object"))?;
        let field = |name: &str| -> Result<Option<String>> {
            match obj.get(name) {
                None | Some(serde_json::Value::Null) => Ok(None),
                Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
                Some(_) => Err(ingest(path, n, format!("field `{name}` is not a string"))),
            }
        };
        let mut e = example(path, n, field("text")?, field("label")?)?;
        for (k, v) in obj {
            if k != "text" && k != "label" {
                let v = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                e.metadata.insert(k.clone(), v);
            }
        }
        out.push(e);
    }
    Ok(out)
}

fn parse_csv(path: &Path, raw: &str) -> Result<Vec<LabeledExample>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw.as_bytes());
    let headers = reader.headers().map_err(|e| ingest(path, 1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (text_col, label_col) = (col("text"), col("label"));
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            ingest(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let get = |c: Option<usize>| {
            c.and_then(|c| record.get(c))
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        let mut e = example(path, line, get(text_col), get(label_col))?;
        for (i, h) in headers.iter().enumerate() {
            if Some(i) != text_col && Some(i) != label_col {
                if let Some(v) = record.get(i) {
                    e.metadata.insert(h.to_string(), v.to_string());
                }
            }
        }
        out.push(e);
    }
    Ok(out)
}

/// Write `dataset` in `format`. CSV output has the columns `text`, `label`
/// followed by the sorted union of metadata keys.
pub fn save_dataset(dataset: &Dataset, path: &Path, format: Format) -> Result<()> {
    let body = match format {
        Format::Jsonl => {
            let mut s = String::new();
            for e in dataset.examples() {
                let mut obj = serde_json::Map::new();
                obj.insert("text".into(), e.input.clone().into());
                obj.insert("label".into(), e.gold_label.clone().into());
                for (k, v) in &e.metadata {
                    obj.insert(k.clone(), v.clone().into());
                }
                s.push_str(&serde_json::Value::Object(obj).to_string());
                s.push('\n');
            }
            s
        }
        Format::Csv => {
            let keys: Vec<String> = dataset
                .examples()
                .iter()
                .flat_map(|e| e.metadata.keys().cloned())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["text".to_string(), "label".to_string()];
            header.extend(keys.iter().cloned());
            w.write_record(&header).map_err(|e| Error::Runtime(e.to_string()))?;
            for e in dataset.examples() {
                let mut row = vec![e.input.clone(), e.gold_label.clone()];
                row.extend(keys.iter().map(|k| e.metadata.get(k).cloned().unwrap_or_default()));
                w.write_record(&row).map_err(|e| Error::Runtime(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Runtime(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Runtime(e.to_string()))?
        }
    };
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Answers keyed by input text, for scripting the mock provider.
pub fn load_answers(path: &Path) -> Result<BTreeMap<String, String>> {
    let ds = load_dataset(path, None)?;
    Ok(ds
        .examples()
        .iter()
        .map(|e| (e.input.clone(), e.gold_label.clone()))
        .collect())
}
