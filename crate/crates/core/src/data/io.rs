//! Delimited-text dataset files.
//!
//! One trial per row: `trial_id, label, feature_1, ..., feature_D`, with a
//! header row. A sidecar `<stem>.meta.toml` records the class count, the
//! feature names and free-form provenance.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

pub const METADATA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetFormat {
    pub delimiter: u8,
}

impl Default for DatasetFormat {
    fn default() -> Self {
        Self { delimiter: b',' }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub version: u32,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub provenance: String,
}

pub fn metadata_path(path: &Path) -> PathBuf {
    path.with_extension("meta.toml")
}

/// Renders the dataset table. Floats use the shortest representation that
/// parses back to the same value, so save/load is lossless.
pub fn dataset_to_string(data: &Dataset, format: DatasetFormat) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(format.delimiter)
        .from_writer(Vec::new());
    let mut header = vec!["trial_id".to_string(), "label".to_string()];
    header.extend(data.feature_names().iter().cloned());
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    let y = data.y_continuous();
    for i in 0..data.n() {
        let mut rec = vec![data.trial_ids()[i].clone(), data.labels()[i].to_string()];
        rec.extend((0..data.d()).map(|j| y[(i, j)].to_string()));
        w.write_record(&rec).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn metadata_to_string(data: &Dataset, provenance: &str) -> Result<String> {
    let meta = DatasetMetadata {
        version: METADATA_VERSION,
        n_classes: data.k(),
        feature_names: data.feature_names().to_vec(),
        provenance: provenance.to_string(),
    };
    toml::to_string(&meta).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_dataset(path: &Path, data: &Dataset, format: DatasetFormat, provenance: &str) -> Result<()> {
    fs::write(path, dataset_to_string(data, format)?).map_err(|e| Error::io(path, e))?;
    let meta = metadata_path(path);
    fs::write(&meta, metadata_to_string(data, provenance)?).map_err(|e| Error::io(&meta, e))
}

pub fn load_metadata(path: &Path) -> Result<Option<DatasetMetadata>> {
    let meta = metadata_path(path);
    if !meta.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let parsed: DatasetMetadata = toml::from_str(&text).map_err(|e| Error::Parse {
        path: meta.clone(),
        line: 0,
        reason: e.to_string(),
    })?;
    if parsed.version != METADATA_VERSION {
        return Err(Error::Parse {
            path: meta,
            line: 0,
            reason: format!("unsupported metadata version {}", parsed.version),
        });
    }
    Ok(Some(parsed))
}

/// Loads a dataset file and its sidecar (when present). Without a sidecar
/// the class count is inferred as `max(label) + 1`, at least 2.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta = load_metadata(path)?;
    parse_dataset(&text, path, format, meta.as_ref())
}

pub fn parse_dataset(
    text: &str,
    path: &Path,
    format: DatasetFormat,
    meta: Option<&DatasetMetadata>,
) -> Result<Dataset> {
    let parse_err = |line: u64, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut r = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.len() < 3 {
        return Err(parse_err(
            1,
            "header needs trial_id, label and at least one feature".into(),
        ));
    }
    let feature_names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let d = feature_names.len();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != d + 2 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", d + 2, rec.len()),
            ));
        }
        ids.push(rec[0].to_string());
        let label: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("label `{}` is not a class index", &rec[1])))?;
        labels.push(label);
        for (j, field) in rec.iter().skip(2).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(
                    line,
                    format!("column `{}`: `{field}` is not a number", feature_names[j]),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("column `{}`: non-finite value `{field}`", feature_names[j]),
                ));
            }
            values.push(v);
        }
    }
    if ids.is_empty() {
        return Err(parse_err(1, "dataset has no data rows".into()));
    }
    let k = match meta {
        Some(m) => {
            if m.feature_names != feature_names {
                return Err(parse_err(1, "header does not match sidecar feature names".into()));
            }
            m.n_classes
        }
        None => labels.iter().copied().max().unwrap_or(0).max(1) + 1,
    };
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(parse_err(i as u64 + 2, format!("label {l} outside [0, {k})")));
    }
    let n = ids.len();
    let y = DMatrix::from_row_slice(n, d, &values);
    Dataset::new(ids, y, labels, k, feature_names)
}
