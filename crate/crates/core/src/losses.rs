//! Cross-entropy and the noise-robust losses (reverse cross-entropy and
//! mean absolute error), with dataset-level reductions and gradients.
//!
//! The robust losses share a symmetry property: summing the loss over all
//! possible labels gives a constant independent of the prediction. That
//! constant is what makes an objective built on them tolerate label noise,
//! so it is exposed as [`LossKind::symmetric_constant`] and checked by
//! tests rather than left implicit.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::model::{self, ClassifierParams, ModelError, Prediction};
use crate::par;

/// Default constant substituted for `log 0` in reverse cross-entropy.
pub const DEFAULT_RCE_A: f64 = -4.0;

/// Errors from loss evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("reverse cross-entropy needs a finite negative constant, got {0}")]
    InvalidRceConstant(f64),
    #[error("got {weights} weights for {examples} examples")]
    WeightCountMismatch { weights: usize, examples: usize },
    #[error("weights must be finite and non-negative")]
    InvalidWeight,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which per-example loss to use.
///
/// Reverse cross-entropy scores `-sum_k f_k log q(k | x)` where `q` is the
/// one-hot label distribution and `log 0` is replaced by the finite
/// constant `a < 0`; this collapses to `-a (1 - f_y)`. Mean absolute error
/// is `sum_k |f_k - q_k| = 2 (1 - f_y)`. Both are bounded and symmetric,
/// unlike cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "kind"))]
pub enum LossKind {
    CrossEntropy,
    ReverseCrossEntropy { a: f64 },
    MeanAbsoluteError,
}

impl LossKind {
    /// Reverse cross-entropy with a validated `log 0` substitute.
    pub fn rce(a: f64) -> Result<Self, LossError> {
        if !a.is_finite() || a >= 0.0 {
            return Err(LossError::InvalidRceConstant(a));
        }
        Ok(LossKind::ReverseCrossEntropy { a })
    }

    /// The loss of one prediction against a label.
    ///
    /// # Panics
    ///
    /// Panics if `label` is not below the number of classes in the
    /// prediction.
    pub fn example_loss(&self, prediction: &Prediction, label: usize) -> f64 {
        assert!(
            label < prediction.probabilities.len(),
            "label {label} out of range for {} classes",
            prediction.probabilities.len()
        );
        match *self {
            // Computed from logits so tiny probabilities stay accurate.
            LossKind::CrossEntropy => {
                model::log_sum_exp(&prediction.logits) - prediction.logits[label]
            }
            LossKind::ReverseCrossEntropy { a } => -a * (1.0 - prediction.probabilities[label]),
            LossKind::MeanAbsoluteError => 2.0 * (1.0 - prediction.probabilities[label]),
        }
    }

    /// The label-sum constant `sum_j loss(f, j)` for symmetric losses, or
    /// `None` for cross-entropy (whose label sum depends on the prediction).
    pub fn symmetric_constant(&self, num_classes: usize) -> Option<f64> {
        let k = num_classes as f64;
        match *self {
            LossKind::CrossEntropy => None,
            LossKind::ReverseCrossEntropy { a } => Some(-(k - 1.0) * a),
            LossKind::MeanAbsoluteError => Some(2.0 * (k - 1.0)),
        }
    }

    pub fn is_robust(&self) -> bool {
        !matches!(self, LossKind::CrossEntropy)
    }

    /// Gradient of the loss with respect to the logits, written into `out`.
    pub(crate) fn logit_gradient(&self, probs: &[f64], label: usize, out: &mut [f64]) {
        match *self {
            LossKind::CrossEntropy => {
                out.copy_from_slice(probs);
                out[label] -= 1.0;
            }
            LossKind::ReverseCrossEntropy { a } => {
                // d/dz_j of -a (1 - f_y) = a f_y (1[j = y] - f_j).
                let fy = probs[label];
                for (j, (o, &p)) in out.iter_mut().zip(probs).enumerate() {
                    let indicator = if j == label { 1.0 } else { 0.0 };
                    *o = a * fy * (indicator - p);
                }
            }
            LossKind::MeanAbsoluteError => {
                let fy = probs[label];
                for (j, (o, &p)) in out.iter_mut().zip(probs).enumerate() {
                    let indicator = if j == label { 1.0 } else { 0.0 };
                    *o = 2.0 * fy * (p - indicator);
                }
            }
        }
    }
}

/// A loss guaranteed to be one of the symmetric (noise-robust) kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RobustLoss(LossKind);

impl RobustLoss {
    /// Reverse cross-entropy; `a` must be a finite negative real.
    pub fn rce(a: f64) -> Result<Self, LossError> {
        Ok(RobustLoss(LossKind::rce(a)?))
    }

    /// Reverse cross-entropy with the default constant `-4`.
    pub fn default_rce() -> Self {
        RobustLoss(LossKind::ReverseCrossEntropy { a: DEFAULT_RCE_A })
    }

    pub fn mae() -> Self {
        RobustLoss(LossKind::MeanAbsoluteError)
    }

    pub fn kind(&self) -> LossKind {
        self.0
    }

    /// The label-sum constant for this loss at `num_classes` classes.
    pub fn symmetric_constant(&self, num_classes: usize) -> f64 {
        self.0
            .symmetric_constant(num_classes)
            .expect("robust losses always have a symmetric constant")
    }
}

/// Cross-entropy of one prediction: `-log softmax(z)_label`.
pub fn ce_loss(prediction: &Prediction, label: usize) -> f64 {
    LossKind::CrossEntropy.example_loss(prediction, label)
}

/// Reverse cross-entropy `-a (1 - f_label)` with `log 0 := a`.
pub fn rce_loss(prediction: &Prediction, label: usize, a: f64) -> f64 {
    LossKind::ReverseCrossEntropy { a }.example_loss(prediction, label)
}

/// Mean absolute error `2 (1 - f_label)`.
pub fn mae_loss(prediction: &Prediction, label: usize) -> f64 {
    LossKind::MeanAbsoluteError.example_loss(prediction, label)
}

fn check_weights(weights: Option<&[f64]>, examples: usize) -> Result<(), LossError> {
    if let Some(w) = weights {
        if w.len() != examples {
            return Err(LossError::WeightCountMismatch { weights: w.len(), examples });
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(LossError::InvalidWeight);
        }
    }
    Ok(())
}

/// Mean (optionally weighted) loss over a dataset:
/// `(1/N) sum_i w_i loss(f(x_i), y_i)` with `w_i = 1` when no weights are
/// given. Note the normalizer stays `N` even with weights, so scaling the
/// weights scales the loss.
pub fn dataset_loss(
    params: &ClassifierParams,
    dataset: &Dataset,
    kind: &LossKind,
    weights: Option<&[f64]>,
) -> Result<f64, LossError> {
    model::check_compatible(params, dataset)?;
    check_weights(weights, dataset.len())?;
    let total = par::sum_scalar(dataset.len(), |i| {
        let fwd = model::forward(params, dataset.vector(i));
        let pred = Prediction { logits: fwd.logits, probabilities: fwd.probs };
        let w = weights.map_or(1.0, |w| w[i]);
        w * kind.example_loss(&pred, dataset.example(i).label)
    });
    Ok(total / dataset.len() as f64)
}

/// Gradient of the mean robust loss over a dataset with respect to the
/// parameters, as a flat vector in parameter layout.
pub fn robust_loss_gradient(
    params: &ClassifierParams,
    dataset: &Dataset,
    loss: &RobustLoss,
) -> Result<Vec<f64>, LossError> {
    let kind = loss.kind();
    dataset_loss_gradient(params, dataset, &kind, None)
}

/// Gradient of `dataset_loss` with respect to the parameters.
pub(crate) fn dataset_loss_gradient(
    params: &ClassifierParams,
    dataset: &Dataset,
    kind: &LossKind,
    weights: Option<&[f64]>,
) -> Result<Vec<f64>, LossError> {
    model::check_compatible(params, dataset)?;
    check_weights(weights, dataset.len())?;
    let n = dataset.len();
    let mut grad = par::sum_vector(n, params.values().len(), |i, acc| {
        let x = dataset.vector(i);
        let fwd = model::forward(params, x);
        let mut delta = vec![0.0; params.num_classes()];
        kind.logit_gradient(&fwd.probs, dataset.example(i).label, &mut delta);
        let w = weights.map_or(1.0, |w| w[i]);
        model::backprop_logit_delta(params, x, &fwd, &delta, w, acc);
    });
    for g in &mut grad {
        *g /= n as f64;
    }
    Ok(grad)
}
