//! Typed JSON artifacts written by the pipeline stages.
//!
//! Every artifact is a single pretty-printed JSON object whose first two
//! fields are a `kind` discriminator and a `format_version`, followed by the
//! `config_hash` of the run that produced it. Reads check the discriminator
//! so that, say, a weights file passed where a subset file is expected fails
//! with a clear message instead of a field-level parse error.

use std::path::{Path, PathBuf};

use noisecurator_core::bilevel::TraceRecord;
use noisecurator_core::eval::SurfaceProbe;
use noisecurator_core::model::Arch;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::fsio::{self, FsError};

/// Version stamp written into every artifact.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Fs(#[from] FsError),
    #[error("`{path}`: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("`{path}` is not a {expected} file (kind is `{found}`)")]
    WrongKind { path: PathBuf, expected: &'static str, found: String },
}

/// A JSON artifact with a fixed `kind` discriminator.
pub trait Artifact: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

/// Learned per-example weights, together with the split that defined which
/// examples they index (so downstream stages can verify alignment).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsArtifact {
    pub kind: String,
    pub format_version: u32,
    pub config_hash: String,
    /// Fraction of the source dataset that went to the train side.
    pub train_fraction: f64,
    /// Seed the split was drawn from.
    pub split_seed: u64,
    /// Ids of the train-side examples, in weight order.
    pub train_ids: Vec<String>,
    /// Outer iterations that produced the weights.
    pub iteration: usize,
    pub values: Vec<f64>,
}

impl Artifact for WeightsArtifact {
    const KIND: &'static str = "weights";
}

/// Per-iteration history of the weight-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceArtifact {
    pub kind: String,
    pub format_version: u32,
    pub config_hash: String,
    pub records: Vec<TraceRecord>,
}

impl Artifact for TraceArtifact {
    const KIND: &'static str = "trace";
}

/// A selected subset: positions and ids into the dataset file it was drawn
/// from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetArtifact {
    pub kind: String,
    pub format_version: u32,
    pub config_hash: String,
    /// How the subset was chosen: `bernoulli`, `top_k`, `small_loss`, or
    /// `confidence`.
    pub method: String,
    pub budget: usize,
    /// Row positions in the source dataset file, ascending.
    pub indices: Vec<usize>,
    /// Ids of the selected examples, aligned with `indices`.
    pub ids: Vec<String>,
}

impl Artifact for SubsetArtifact {
    const KIND: &'static str = "subset";
}

/// Trained classifier parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsArtifact {
    pub kind: String,
    pub format_version: u32,
    pub config_hash: String,
    pub arch: Arch,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub values: Vec<f64>,
}

impl Artifact for ParamsArtifact {
    const KIND: &'static str = "params";
}

/// Evaluation results. Fields that only exist in some runs (a labelled
/// source dataset, a subset, a test file) are optional and omitted from the
/// JSON when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub kind: String,
    pub format_version: u32,
    pub config_hash: String,
    /// Which split the headline numbers are measured on.
    pub split: String,
    pub examples: usize,
    pub accuracy: f64,
    pub ce: f64,
    pub rce: f64,
    pub mae: f64,
    /// How well the learned weights separate clean from corrupted examples
    /// (area under the ROC curve); present when the train split carries
    /// clean flags.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_auroc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_budget: Option<usize>,
    /// Fraction of the selected subset whose labels are uncorrupted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_clean_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_ce: Option<f64>,
}

impl Artifact for Metrics {
    const KIND: &'static str = "metrics";
}

/// A two-dimensional slice through the loss landscape around trained
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceArtifact {
    pub kind: String,
    pub format_version: u32,
    pub config_hash: String,
    pub probe: SurfaceProbe,
}

impl Artifact for SurfaceArtifact {
    const KIND: &'static str = "surface";
}

/// One entry in a run report: an artifact file with its content digest and
/// the config hash recorded inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub name: String,
    pub file: String,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// The run report: every artifact in the output directory with its digest,
/// plus the metrics summary when one was written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportArtifact {
    pub kind: String,
    pub format_version: u32,
    pub config_hash: String,
    pub artifacts: Vec<ArtifactRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<Metrics>,
}

impl Artifact for ReportArtifact {
    const KIND: &'static str = "report";
}

/// Writes an artifact as pretty-printed JSON, refusing to overwrite unless
/// `force` is set.
pub fn write_json<T: Artifact>(path: &Path, artifact: &T, force: bool) -> Result<(), ArtifactError> {
    let mut text = serde_json::to_string_pretty(artifact).expect("artifact serializes");
    text.push('\n');
    fsio::write_guarded(path, text.as_bytes(), force)?;
    Ok(())
}

/// Reads an artifact, checking the `kind` discriminator first.
pub fn read_json<T: Artifact>(path: &Path) -> Result<T, ArtifactError> {
    let text = std::fs::read_to_string(path).map_err(fsio::io_error(path))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|source| ArtifactError::Json { path: path.to_path_buf(), source })?;
    let found = value.get("kind").and_then(serde_json::Value::as_str).unwrap_or("absent");
    if found != T::KIND {
        return Err(ArtifactError::WrongKind {
            path: path.to_path_buf(),
            expected: T::KIND,
            found: found.to_string(),
        });
    }
    serde_json::from_value(value)
        .map_err(|source| ArtifactError::Json { path: path.to_path_buf(), source })
}

/// The `config_hash` field of any JSON artifact, without caring about its
/// kind (used when assembling reports).
pub fn read_config_hash(path: &Path) -> Result<Option<String>, ArtifactError> {
    let text = std::fs::read_to_string(path).map_err(fsio::io_error(path))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|source| ArtifactError::Json { path: path.to_path_buf(), source })?;
    Ok(value.get("config_hash").and_then(serde_json::Value::as_str).map(str::to_string))
}
