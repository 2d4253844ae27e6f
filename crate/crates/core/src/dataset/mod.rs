//! `(features, class, explanations)` records: file format, vocabulary
//! input, stratified splitting and a synthetic generator.

mod split;
mod synthetic;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use split::{split, Splits};
pub use synthetic::{generate_synthetic, nearest_prototype, SyntheticData, SyntheticSpec};

use crate::error::{Error, Result};
use crate::explainer::Vocabulary;

pub const DATASET_FORMAT: &str = "interpnet-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub features: Vec<f64>,
    pub label: usize,
    #[serde(default)]
    pub explanations: Vec<String>,
}

/// First line of a dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub num_classes: usize,
    pub feature_dim: usize,
}

/// Validated records sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    num_classes: usize,
    feature_dim: usize,
    records: Vec<DatasetRecord>,
}

fn validate_record(r: &DatasetRecord, num_classes: usize, feature_dim: usize) -> Result<()> {
    if r.features.len() != feature_dim {
        return Err(Error::Validation(format!(
            "record `{}` has {} features, expected {feature_dim}",
            r.id,
            r.features.len()
        )));
    }
    if r.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "record `{}` has non-finite features",
            r.id
        )));
    }
    if r.label >= num_classes {
        return Err(Error::Validation(format!(
            "record `{}` has label {} but there are {num_classes} classes",
            r.id, r.label
        )));
    }
    if r.explanations.is_empty() {
        return Err(Error::Validation(format!(
            "record `{}` has no explanations",
            r.id
        )));
    }
    for e in &r.explanations {
        if !e.trim_end().ends_with('.') {
            return Err(Error::Validation(format!(
                "record `{}`: explanation {e:?} does not end with a period",
                r.id
            )));
        }
    }
    Ok(())
}

impl Dataset {
    pub fn new(num_classes: usize, records: Vec<DatasetRecord>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Validation("num_classes must be positive".into()));
        }
        let first = records
            .first()
            .ok_or_else(|| Error::Validation("dataset has no records".into()))?;
        let feature_dim = first.features.len();
        if feature_dim == 0 {
            return Err(Error::Validation("feature vectors must be nonempty".into()));
        }
        let mut ids = HashSet::new();
        for r in &records {
            validate_record(r, num_classes, feature_dim)?;
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate record id `{}`", r.id)));
            }
        }
        Ok(Dataset {
            num_classes,
            feature_dim,
            records,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DatasetRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            format: DATASET_FORMAT.to_string(),
            version: DATASET_VERSION,
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
        }
    }

    /// Every explanation string in record order.
    pub fn explanations(&self) -> impl Iterator<Item = &str> {
        self.records
            .iter()
            .flat_map(|r| r.explanations.iter().map(String::as_str))
    }
}

/// Vocabulary over every explanation in `records`.
pub fn build_vocabulary(records: &[DatasetRecord], min_count: usize) -> Vocabulary {
    Vocabulary::build(
        records
            .iter()
            .flat_map(|r| r.explanations.iter().map(String::as_str)),
        min_count,
    )
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a dataset file: a header line, then one JSON record per line.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header: DatasetHeader = loop {
        let Some((i, line)) = lines.next() else {
            return Err(parse_error(path, 1, "missing header line"));
        };
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        break serde_json::from_str(&line)
            .map_err(|e| parse_error(path, i + 1, format!("bad header: {e}")))?;
    };
    if header.format != DATASET_FORMAT {
        return Err(parse_error(
            path,
            1,
            format!("unknown format `{}`", header.format),
        ));
    }
    if header.version != DATASET_VERSION {
        return Err(parse_error(
            path,
            1,
            format!("unsupported version {}", header.version),
        ));
    }

    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| parse_error(path, i + 1, e.to_string()))?;
        validate_record(&rec, header.num_classes, header.feature_dim)
            .map_err(|e| Error::Validation(format!("line {}: {e}", i + 1)))?;
        records.push(rec);
    }
    Dataset::new(header.num_classes, records)
}

/// Writes the canonical file form of `dataset`.
pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut out, &dataset.header())?;
    out.write_all(b"\n").map_err(io)?;
    for r in &dataset.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}
