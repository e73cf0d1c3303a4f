//! Classical label-noise filters to compare the bilevel weights against.
//!
//! Both baselines train the classifier on the noisy data itself and score
//! every example by how well the model explains its label: confidence
//! filtering averages the predicted label probability over epochs,
//! small-loss filtering ranks by the final cross-entropy. Like the bilevel
//! procedure, they never look at clean flags.

use alloc::vec::Vec;

use crate::bilevel::{train_loop, BilevelError, TrainConfig};
use crate::data::Dataset;
use crate::losses::LossKind;
use crate::model::{self, ModelError};
use crate::par;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("keep count must lie in 1..={examples}, got {keep}")]
    KeepOutOfRange { keep: usize, examples: usize },
    #[error(transparent)]
    Train(#[from] BilevelError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FilterMethod {
    Confidence,
    SmallLoss,
}

/// Result of a filtering baseline.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FilterReport {
    pub method: FilterMethod,
    /// Indices of the kept examples, ascending.
    pub kept: Vec<usize>,
    /// Per-example scores (higher reads as "more likely clean"): mean
    /// label probability for confidence, negated final cross-entropy for
    /// small-loss.
    pub scores: Vec<f64>,
}

/// Scores each example by its label probability averaged over the end of
/// every training epoch and keeps the `keep` highest.
pub fn confidence_filter(
    train: &Dataset,
    config: &TrainConfig,
    keep: usize,
) -> Result<FilterReport, BaselineError> {
    check_keep(keep, train.len())?;
    config.validate()?;
    let init = init_params(train, config)?;
    let mut sums = alloc::vec![0.0; train.len()];
    let mut epochs_seen = 0usize;
    train_loop(
        train,
        &LossKind::CrossEntropy,
        None,
        &init,
        config.epochs,
        config.step_size,
        config.batch_size,
        config.optimizer,
        config.seed,
        |_, params| {
            let probs = par::map_indexed(train.len(), |i| {
                let fwd = model::forward(params, train.vector(i));
                fwd.probs[train.example(i).label]
            });
            for (s, p) in sums.iter_mut().zip(probs) {
                *s += p;
            }
            epochs_seen += 1;
        },
    )?;
    let scores: Vec<f64> =
        sums.into_iter().map(|s| s / (epochs_seen.max(1)) as f64).collect();
    Ok(FilterReport { method: FilterMethod::Confidence, kept: top_indices(&scores, keep), scores })
}

/// Scores each example by the negated cross-entropy of its label after a
/// short warm-up training run (`config.epochs` epochs) and keeps the `keep`
/// highest, i.e. the smallest losses.
pub fn small_loss_filter(
    train: &Dataset,
    config: &TrainConfig,
    keep: usize,
) -> Result<FilterReport, BaselineError> {
    check_keep(keep, train.len())?;
    config.validate()?;
    let init = init_params(train, config)?;
    let out = train_loop(
        train,
        &LossKind::CrossEntropy,
        None,
        &init,
        config.epochs,
        config.step_size,
        config.batch_size,
        config.optimizer,
        config.seed,
        |_, _| {},
    )?;
    let params = out.params_final;
    let scores = par::map_indexed(train.len(), |i| {
        let fwd = model::forward(&params, train.vector(i));
        let pred = model::Prediction { logits: fwd.logits, probabilities: fwd.probs };
        -LossKind::CrossEntropy.example_loss(&pred, train.example(i).label)
    });
    Ok(FilterReport { method: FilterMethod::SmallLoss, kept: top_indices(&scores, keep), scores })
}

fn check_keep(keep: usize, examples: usize) -> Result<(), BaselineError> {
    if keep == 0 || keep > examples {
        return Err(BaselineError::KeepOutOfRange { keep, examples });
    }
    Ok(())
}

fn init_params(
    train: &Dataset,
    config: &TrainConfig,
) -> Result<model::ClassifierParams, BaselineError> {
    let dim = train.feature_dim().ok_or(ModelError::TextFeatures)?;
    Ok(model::ClassifierParams::init(config.arch, train.num_classes(), dim, config.seed)?)
}

/// The `keep` indices with the highest scores, ties toward the smaller
/// index, returned ascending.
fn top_indices(scores: &[f64], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).expect("scores are finite").then(a.cmp(&b))
    });
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    kept
}
