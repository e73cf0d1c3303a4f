//! The pipeline stages as plain functions over in-memory data.
//!
//! Each subcommand and the end-to-end pipeline call the same functions here;
//! file reading and writing stay in the callers so stages compose without
//! touching the disk.

use std::collections::HashMap;

use noisecurator_core::baselines::{confidence_filter, small_loss_filter, FilterMethod, FilterReport};
use noisecurator_core::bilevel::{run_bilevel, train_classifier, BilevelTrace, SampleWeights};
use noisecurator_core::data::{make_gaussian_blobs, split, Dataset, FeatureKind};
use noisecurator_core::eval::{loss_surface, separation_auroc, SurfaceProbe};
use noisecurator_core::losses::{dataset_loss, LossKind};
use noisecurator_core::model::{evaluate_accuracy, featurize, ClassifierParams, ModelError};
use noisecurator_core::noise::{inject_noise, NoiseWarning};
use noisecurator_core::sampling::{sample_subset, top_k};

use crate::artifact::{Artifact, Metrics, FORMAT_VERSION};
use crate::config::{RunConfig, SamplerChoice};
use crate::error::Error;

/// Generates the synthetic training blobs described by the config.
pub fn generate_blobs(cfg: &RunConfig) -> Result<Dataset, Error> {
    Ok(make_gaussian_blobs(
        cfg.blob_per_class,
        cfg.blob_classes,
        cfg.blob_dim,
        cfg.blob_separation,
        cfg.stage_seed("blobs"),
    )?)
}

/// Generates a held-out test set from the same blob parameters but an
/// independent seed, so its labels stay trusted.
pub fn generate_test_blobs(cfg: &RunConfig) -> Result<Dataset, Error> {
    Ok(make_gaussian_blobs(
        cfg.blob_per_class,
        cfg.blob_classes,
        cfg.blob_dim,
        cfg.blob_separation,
        cfg.stage_seed("test-blobs"),
    )?)
}

/// Applies the configured featurization: text is hashed, vectors pass
/// through (with a dimension check when `feature_dim` is set explicitly).
pub fn featurize_data(data: &Dataset, cfg: &RunConfig) -> Result<Dataset, Error> {
    let data_dim = match data.feature_kind() {
        FeatureKind::Vector { dim } => Some(dim),
        FeatureKind::Text => None,
    };
    let spec = cfg.feature_spec(data_dim).ok_or(ModelError::TextFeatures)?;
    Ok(featurize(data, &spec)?)
}

/// Splits into train and validation sides using the seeded shuffle.
pub fn split_data(data: &Dataset, cfg: &RunConfig) -> Result<(Dataset, Dataset), Error> {
    Ok(split(data, &cfg.split_spec())?)
}

/// Corrupts labels per the config; `None` when noise is disabled. Returned
/// warnings flag settings outside the tolerance guarantees and should be
/// surfaced to the user.
pub fn inject(data: &Dataset, cfg: &RunConfig) -> Result<Option<(Dataset, Vec<NoiseWarning>)>, Error> {
    let Some(spec) = cfg.noise_spec() else {
        return Ok(None);
    };
    let warnings = spec.validate(data.num_classes())?;
    let noisy = inject_noise(data, &spec)?;
    Ok(Some((noisy, warnings)))
}

/// Human-readable form of a noise warning.
pub fn warning_text(warning: &NoiseWarning) -> String {
    match warning {
        NoiseWarning::UniformRateBeyondTolerance { rate, threshold } => format!(
            "noise rate {rate} is at or beyond {threshold}, where the observed majority label \
             can flip"
        ),
        NoiseWarning::ClassPairBeyondTolerance { from, to } => format!(
            "class {from} is observed as class {to} at least as often as as itself"
        ),
        NoiseWarning::PeakRateBeyondTolerance { max_rate, threshold } => format!(
            "peak noise rate {max_rate} is at or beyond {threshold}, where the observed \
             majority label can flip near the boundary"
        ),
    }
}

/// Learns per-example weights on the train split against the validation
/// split.
pub fn reweight(
    train: &Dataset,
    validation: &Dataset,
    cfg: &RunConfig,
) -> Result<(SampleWeights, BilevelTrace), Error> {
    Ok(run_bilevel(train, validation, &cfg.bilevel_config())?)
}

/// A subset chosen from the train split: positions index the split, not the
/// source file.
pub struct SubsetSelection {
    pub method: &'static str,
    pub budget: usize,
    pub positions: Vec<usize>,
}

/// Draws a subset from the learned weights with the configured sampler.
pub fn select_subset(weights: &SampleWeights, cfg: &RunConfig) -> Result<SubsetSelection, Error> {
    let budget = cfg.resolve_budget(weights.len());
    let positions = match cfg.sampler {
        SamplerChoice::Bernoulli => sample_subset(weights, budget, cfg.stage_seed("subset"))?,
        SamplerChoice::TopK => top_k(weights, budget)?,
    };
    if positions.is_empty() {
        return Err(Error::EmptySubset);
    }
    Ok(SubsetSelection { method: cfg.sampler.as_str(), budget, positions })
}

/// Maps train-split positions to `(row, id)` pairs in the source dataset,
/// ascending by row.
pub fn map_to_source(
    train: &Dataset,
    positions: &[usize],
    source: &Dataset,
) -> (Vec<usize>, Vec<String>) {
    let rows: HashMap<&str, usize> =
        source.examples().iter().enumerate().map(|(i, ex)| (ex.id.as_str(), i)).collect();
    let mut pairs: Vec<(usize, String)> = positions
        .iter()
        .map(|&p| {
            let id = &train.example(p).id;
            let row = *rows.get(id.as_str()).expect("train split comes from this dataset");
            (row, id.clone())
        })
        .collect();
    pairs.sort_by_key(|(row, _)| *row);
    pairs.into_iter().unzip()
}

/// Runs the loss- or confidence-based filtering baseline over a train split.
pub fn filter_subset(train: &Dataset, cfg: &RunConfig) -> Result<FilterReport, Error> {
    let keep = cfg.resolve_budget(train.len());
    let config = cfg.train_config("filter");
    let report = match cfg.core_filter_method() {
        FilterMethod::SmallLoss => small_loss_filter(train, &config, keep)?,
        FilterMethod::Confidence => confidence_filter(train, &config, keep)?,
    };
    Ok(report)
}

/// Trains the final classifier on (usually subset) data with cross-entropy.
pub fn train_final(data: &Dataset, cfg: &RunConfig) -> Result<ClassifierParams, Error> {
    Ok(train_classifier(data, &LossKind::CrossEntropy, None, &cfg.train_config("train"))?)
}

/// Headline metrics of a classifier on one split: accuracy plus the three
/// losses. The optional fields start empty; callers add what their run
/// knows (weights, subset, test set).
pub fn evaluate_metrics(
    params: &ClassifierParams,
    data: &Dataset,
    split: &str,
    cfg: &RunConfig,
) -> Result<Metrics, Error> {
    Ok(Metrics {
        kind: Metrics::KIND.to_string(),
        format_version: FORMAT_VERSION,
        config_hash: cfg.hash(),
        split: split.to_string(),
        examples: data.len(),
        accuracy: evaluate_accuracy(params, data)?,
        ce: dataset_loss(params, data, &LossKind::CrossEntropy, None)?,
        rce: dataset_loss(params, data, &LossKind::rce(cfg.rce_a)?, None)?,
        mae: dataset_loss(params, data, &LossKind::MeanAbsoluteError, None)?,
        weight_auroc: None,
        weight_mean: None,
        subset_size: None,
        subset_budget: None,
        subset_clean_fraction: None,
        test_accuracy: None,
        test_ce: None,
    })
}

/// Adds weight statistics: the mean always, the clean/noisy separation
/// (AUROC) when the train split carries both clean and corrupted examples.
pub fn add_weight_metrics(metrics: &mut Metrics, weights: &SampleWeights, train: &Dataset) {
    let values = weights.values();
    metrics.weight_mean = Some(values.iter().sum::<f64>() / values.len() as f64);
    let flags: Vec<bool> = train.clean_flags().iter().map(|f| f.unwrap_or(true)).collect();
    if train.clean_flags().iter().all(Option::is_some) {
        metrics.weight_auroc = separation_auroc(values, &flags).ok();
    }
}

/// Adds subset statistics: size, budget, and (when the source rows carry
/// clean flags) the fraction of selected labels that are uncorrupted.
pub fn add_subset_metrics(
    metrics: &mut Metrics,
    rows: &[usize],
    budget: usize,
    source: &Dataset,
) {
    metrics.subset_size = Some(rows.len());
    metrics.subset_budget = Some(budget);
    let flags: Vec<Option<bool>> = rows.iter().map(|&r| source.example(r).clean).collect();
    if !flags.is_empty() && flags.iter().all(Option::is_some) {
        let clean = flags.iter().filter(|f| **f == Some(true)).count();
        metrics.subset_clean_fraction = Some(clean as f64 / flags.len() as f64);
    }
}

/// Adds test-set accuracy and cross-entropy.
pub fn add_test_metrics(
    metrics: &mut Metrics,
    params: &ClassifierParams,
    test: &Dataset,
) -> Result<(), Error> {
    metrics.test_accuracy = Some(evaluate_accuracy(params, test)?);
    metrics.test_ce = Some(dataset_loss(params, test, &LossKind::CrossEntropy, None)?);
    Ok(())
}

/// Probes the loss landscape around trained parameters on the given data.
pub fn probe_surface(
    params: &ClassifierParams,
    data: &Dataset,
    cfg: &RunConfig,
) -> Result<SurfaceProbe, Error> {
    Ok(loss_surface(params, data, &cfg.surface_kinds(), &cfg.grid_spec(), cfg.stage_seed("surface"))?)
}
