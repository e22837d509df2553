//! Precomputed feature tables standing in for large pretrained encoders.
//!
//! Each JSONL line is `{"key": "...", "vector": [..]}`. Keys follow the
//! convention of [`FeatureKey`]; a table is produced offline by running the
//! pretrained model over a dataset, and is read-only here.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::Deserialize;

use crate::error::{Error, Result};

/// Lookup key for one encoded item of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKey<'a> {
    Post(&'a str),
    Caption(&'a str),
    TextEvidence(&'a str, usize),
    ImageEvidence(&'a str, usize),
}

impl std::fmt::Display for FeatureKey<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureKey::Post(id) => write!(f, "{id}"),
            FeatureKey::Caption(id) => write!(f, "{id}/caption"),
            FeatureKey::TextEvidence(id, k) => write!(f, "{id}/text_evidence/{k}"),
            FeatureKey::ImageEvidence(id, k) => write!(f, "{id}/image_evidence/{k}"),
        }
    }
}

#[derive(Deserialize)]
struct Row {
    key: String,
    vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    source: PathBuf,
    dim: usize,
    rows: HashMap<String, Array1<f64>>,
}

impl FeatureTable {
    pub fn open(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::MissingResource(format!("feature table {}: {e}", path.display())))?;
        let mut rows = HashMap::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row: Row = serde_json::from_str(line).map_err(|e| Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            let d = *dim.get_or_insert(row.vector.len());
            if d == 0 || row.vector.len() != d {
                return Err(Error::Record {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("vector length {} (expected {d}, non-zero)", row.vector.len()),
                });
            }
            rows.insert(row.key, Array1::from(row.vector));
        }
        let dim = dim.ok_or_else(|| Error::EmptyDataset(path.to_path_buf()))?;
        Ok(Self {
            source: path.to_path_buf(),
            dim,
            rows,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn lookup(&self, key: FeatureKey<'_>) -> Result<Array1<f64>> {
        let k = key.to_string();
        self.rows
            .get(&k)
            .cloned()
            .ok_or_else(|| Error::MissingResource(format!("no feature row `{k}` in {}", self.source.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_and_reports_missing_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        fs::write(
            &path,
            "{\"key\":\"a\",\"vector\":[1,2,3]}\n\n{\"key\":\"a/caption\",\"vector\":[0,0,1]}\n",
        )
        .unwrap();
        let t = FeatureTable::open(&path).unwrap();
        assert_eq!((t.dim(), t.len()), (3, 2));
        assert_eq!(t.lookup(FeatureKey::Post("a")).unwrap().to_vec(), [1.0, 2.0, 3.0]);
        let err = t.lookup(FeatureKey::TextEvidence("a", 2)).unwrap_err().to_string();
        assert!(err.contains("a/text_evidence/2"), "{err}");

        fs::write(
            &path,
            "{\"key\":\"a\",\"vector\":[1]}\n{\"key\":\"b\",\"vector\":[1,2]}\n",
        )
        .unwrap();
        assert!(matches!(FeatureTable::open(&path), Err(Error::Record { line: 2, .. })));
        let missing = FeatureTable::open(&dir.path().join("nope.jsonl")).unwrap_err();
        assert!(matches!(missing, Error::MissingResource(m) if m.contains("nope.jsonl")));
    }
}
