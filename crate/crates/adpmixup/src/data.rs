//! Labeled text datasets and their JSON Lines serialization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One classification example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: usize,
}

/// A named list of labeled examples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    pub name: String,
    pub items: Vec<LabeledExample>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, items: Vec<LabeledExample>) -> Self {
        LabeledDataset {
            name: name.into(),
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Error unless every label is `< classes` and the set is nonempty.
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::Config(format!("dataset '{}' is empty", self.name)));
        }
        for (i, item) in self.items.iter().enumerate() {
            if item.label >= classes {
                return Err(Error::Config(format!(
                    "dataset '{}' item {i} has label {} but the model has {} classes",
                    self.name, item.label, classes
                )));
            }
        }
        Ok(())
    }

    /// First `n` items as a borrowed slice (fewer if the set is smaller).
    pub fn head(&self, n: usize) -> &[LabeledExample] {
        &self.items[..n.min(self.items.len())]
    }
}

/// Read a JSON Lines file of `{"text": ..., "label": ...}` objects. Blank
/// lines are ignored; any malformed line or label `>= classes` is an error
/// naming the offending line.
pub fn read_jsonl(path: &Path, classes: usize) -> Result<LabeledDataset> {
    let file = File::open(path).map_err(|e| Error::Dataset {
        path: path.to_path_buf(),
        detail: format!("cannot open: {e}"),
    })?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Dataset {
            path: path.to_path_buf(),
            detail: format!("line {}: read error: {e}", lineno + 1),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item: LabeledExample = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", lineno + 1),
        })?;
        if item.label >= classes {
            return Err(Error::Dataset {
                path: path.to_path_buf(),
                detail: format!(
                    "line {}: label {} out of range for {} classes",
                    lineno + 1,
                    item.label,
                    classes
                ),
            });
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            detail: "no examples found".into(),
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(LabeledDataset::new(name, items))
}

/// Write a dataset as JSON Lines, one compact object per line. Deterministic:
/// the same dataset always serializes to the same bytes.
pub fn write_jsonl(path: &Path, dataset: &LabeledDataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Dataset {
        path: path.to_path_buf(),
        detail: format!("cannot create: {e}"),
    })?;
    let mut w = BufWriter::new(file);
    for item in &dataset.items {
        let line = serde_json::to_string(item).expect("serializable");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LabeledDataset {
        LabeledDataset::new(
            "sample",
            vec![
                LabeledExample {
                    text: "a fine film".into(),
                    label: 1,
                },
                LabeledExample {
                    text: "a dreadful film".into(),
                    label: 0,
                },
            ],
        )
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let ds = sample();
        write_jsonl(&path, &ds).unwrap();
        let back = read_jsonl(&path, 2).unwrap();
        assert_eq!(back.items, ds.items);
        assert_eq!(back.name, "d");
    }

    #[test]
    fn write_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        write_jsonl(&p1, &sample()).unwrap();
        write_jsonl(&p2, &sample()).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_out_of_range_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"text\": \"x\", \"label\": 5}\n").unwrap();
        let err = read_jsonl(&path, 2).unwrap_err();
        assert!(err.to_string().contains("label 5"));
        assert!(err.is_config());
    }

    #[test]
    fn rejects_malformed_line_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"text\": \"ok\", \"label\": 0}\nnot json\n").unwrap();
        let err = read_jsonl(&path, 2).unwrap_err();
        assert!(err.to_string().contains("line 2"), "got: {err}");
    }

    #[test]
    fn skips_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blank.jsonl");
        std::fs::write(
            &path,
            "{\"text\": \"x\", \"label\": 0}\n\n{\"text\": \"y\", \"label\": 1}\n",
        )
        .unwrap();
        let ds = read_jsonl(&path, 2).unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(read_jsonl(&path, 2).is_err());
    }

    #[test]
    fn validate_catches_bad_labels() {
        let ds = sample();
        assert!(ds.validate(2).is_ok());
        assert!(ds.validate(1).is_err());
        let empty = LabeledDataset::new("e", vec![]);
        assert!(empty.validate(2).is_err());
    }
}
