//! One error type for everything a command can hit, with a stage wrapper so
//! pipeline failures say which stage broke.

use std::path::PathBuf;

use noisecurator_core::baselines::BaselineError;
use noisecurator_core::bilevel::BilevelError;
use noisecurator_core::data::DataError;
use noisecurator_core::eval::EvalError;
use noisecurator_core::losses::LossError;
use noisecurator_core::model::ModelError;
use noisecurator_core::noise::NoiseError;
use noisecurator_core::sampling::SamplingError;

use crate::artifact::ArtifactError;
use crate::config::ConfigError;
use crate::datafile::DataFileError;
use crate::fsio::FsError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fs(#[from] FsError),
    #[error(transparent)]
    DataFile(#[from] DataFileError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Bilevel(#[from] BilevelError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),

    /// A pipeline stage failed; the cause carries the detail.
    #[error("stage `{stage}` failed")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// The weights file was learned on a different train split than the
    /// current config and dataset produce.
    #[error(
        "weights in `{path}` index a different train split than this run produces \
         (check the dataset file, seed, and train_fraction)"
    )]
    SplitMismatch { path: PathBuf },

    /// A subset entry does not line up with the dataset it claims to index.
    #[error(
        "subset id `{id}` does not match the dataset at row {index} (found `{found}`); \
         the subset was selected from a different dataset file"
    )]
    SubsetMismatch { id: String, index: usize, found: String },

    /// Bernoulli sampling drew nothing; there is no subset to write.
    #[error("sampling selected no examples; raise the budget or use the top_k sampler")]
    EmptySubset,

    /// Report building found artifacts from more than one run.
    #[error(
        "artifacts in `{dir}` come from different runs: `{first_file}` has config hash \
         {first_hash} but `{second_file}` has {second_hash}"
    )]
    MixedConfigHashes {
        dir: PathBuf,
        first_file: String,
        first_hash: String,
        second_file: String,
        second_hash: String,
    },

    /// Report building found nothing to report on.
    #[error("no artifacts with a config hash found in `{dir}`")]
    NoArtifacts { dir: PathBuf },
}

impl Error {
    /// Wraps an error in the stage it occurred in.
    pub fn in_stage(stage: &'static str, source: impl Into<Error>) -> Self {
        Error::Stage { stage, source: Box::new(source.into()) }
    }
}

/// Runs one stage, tagging any failure with its name.
pub fn stage<T>(name: &'static str, run: impl FnOnce() -> Result<T, Error>) -> Result<T, Error> {
    run().map_err(|e| Error::in_stage(name, e))
}
