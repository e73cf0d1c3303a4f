//! Dataset files: JSON lines with a leading header record.
//!
//! The first line describes the collection (`kind`, class count, provenance,
//! and the config hash that produced the file); every following line is one
//! example. Vector and text examples carry `features` or `text`
//! respectively, plus an optional `clean` flag recorded by noise injection.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use noisecurator_core::data::{DataError, Dataset, Example, Features, Provenance};
use serde::{Deserialize, Serialize};

use crate::fsio::{self, FsError};

#[derive(Debug, thiserror::Error)]
pub enum DataFileError {
    #[error(transparent)]
    Fs(#[from] FsError),
    #[error("`{path}` line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("`{path}` is empty; expected a header line")]
    Empty { path: PathBuf },
    #[error("`{path}` is not a dataset file (header kind is `{found}`)")]
    WrongKind { path: PathBuf, found: String },
    #[error("`{path}` line {line}: example `{id}` must have exactly one of `features` or `text`")]
    AmbiguousFeatures { path: PathBuf, line: usize, id: String },
    #[error("`{path}`: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: DataError,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    num_classes: usize,
    #[serde(default)]
    provenance: Option<Provenance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    id: String,
    label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clean: Option<bool>,
}

/// Writes a dataset with the producing config hash in the header.
pub fn write_dataset(
    path: &Path,
    dataset: &Dataset,
    config_hash: &str,
    force: bool,
) -> Result<(), DataFileError> {
    let header = Header {
        kind: "dataset".to_string(),
        format_version: 1,
        config_hash: Some(config_hash.to_string()),
        num_classes: dataset.num_classes(),
        provenance: Some(dataset.provenance()),
    };
    let mut out = String::new();
    let _ = writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"));
    for ex in dataset.examples() {
        let row = Row {
            id: ex.id.clone(),
            label: ex.label,
            features: ex.features.as_vector().map(<[f64]>::to_vec),
            text: ex.features.as_text().map(str::to_string),
            clean: ex.clean,
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&row).expect("row serializes"));
    }
    fsio::write_guarded(path, out.as_bytes(), force)?;
    Ok(())
}

/// Reads a dataset file, returning the data and the config hash recorded in
/// its header (absent on hand-prepared files).
pub fn read_dataset(path: &Path) -> Result<(Dataset, Option<String>), DataFileError> {
    let text = std::fs::read_to_string(path).map_err(fsio::io_error(path))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());

    let (header_line, header_text) =
        lines.next().ok_or_else(|| DataFileError::Empty { path: path.to_path_buf() })?;
    let header: Header = serde_json::from_str(header_text).map_err(|source| {
        DataFileError::Json { path: path.to_path_buf(), line: header_line + 1, source }
    })?;
    if header.kind != "dataset" {
        return Err(DataFileError::WrongKind { path: path.to_path_buf(), found: header.kind });
    }

    let mut examples = Vec::new();
    for (i, line) in lines {
        let row: Row = serde_json::from_str(line).map_err(|source| DataFileError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        let features = match (row.features, row.text) {
            (Some(values), None) => Features::Vector(values),
            (None, Some(text)) => Features::Text(text),
            _ => {
                return Err(DataFileError::AmbiguousFeatures {
                    path: path.to_path_buf(),
                    line: i + 1,
                    id: row.id,
                })
            }
        };
        examples.push(Example { id: row.id, label: row.label, features, clean: row.clean });
    }

    let provenance = header.provenance.unwrap_or(Provenance::Ingested);
    let dataset = Dataset::new(examples, header.num_classes, provenance)
        .map_err(|source| DataFileError::Invalid { path: path.to_path_buf(), source })?;
    Ok((dataset, header.config_hash))
}

/// The config hash in a dataset file's header, if any, without reading the
/// examples (used by report building).
pub fn read_config_hash(path: &Path) -> Result<Option<String>, DataFileError> {
    let text = std::fs::read_to_string(path).map_err(fsio::io_error(path))?;
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| DataFileError::Empty { path: path.to_path_buf() })?;
    let header: Header = serde_json::from_str(first)
        .map_err(|source| DataFileError::Json { path: path.to_path_buf(), line: 1, source })?;
    if header.kind != "dataset" {
        return Err(DataFileError::WrongKind { path: path.to_path_buf(), found: header.kind });
    }
    Ok(header.config_hash)
}
