//! Controlled label corruption and a measurement of how well the robust
//! losses tolerate it.
//!
//! Three noise models are supported: uniform (every example flips to a
//! random other class with one fixed rate), class-dependent (a row-
//! stochastic transition matrix over true classes), and instance-dependent
//! (the flip rate decays exponentially with the example's margin from an
//! oracle separator, so ambiguous examples are corrupted more often, the
//! way human annotators err).
//!
//! Under uniform noise at rate `eta`, a loss with label-sum constant `C`
//! satisfies, in expectation over the corruption,
//!
//! `L_noisy(theta) = (K - 1 - K eta) / (K - 1) * L_clean(theta)
//!                   + eta C / (K - 1)`
//!
//! an affine map with a positive slope whenever `eta < (K - 1) / K`, so the
//! noisy objective ranks parameters exactly like the clean one.
//! [`tolerance_oracle`] measures both sides of that identity empirically.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, FeatureKind, Provenance};
use crate::losses::{self, LossKind};
use crate::math;
use crate::model::{self, Arch, ClassifierParams, ModelError};
use crate::par;
use crate::seed::{derive_seed, rng_from};

/// Iterations and step size of the internal full-batch separator fit used
/// for instance-dependent margins.
const ORACLE_ITERS: usize = 500;
const ORACLE_STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NoiseError {
    #[error("noise rate must lie in [0, 1), got {0}")]
    InvalidRate(f64),
    #[error("transition matrix must be {expected} x {expected}")]
    MatrixShape { expected: usize },
    #[error("transition matrix row {row} sums to {sum}, expected 1")]
    MatrixRowSum { row: usize, sum: f64 },
    #[error("transition matrix entry ({row}, {col}) is negative")]
    NegativeEntry { row: usize, col: usize },
    #[error("margin temperature tau must be positive and finite, got {0}")]
    InvalidTau(f64),
    #[error("cannot corrupt labels of a single-class dataset")]
    SingleClass,
    #[error("instance-dependent noise requires dense feature vectors")]
    NeedsVectors,
    #[error("the internal separator fit diverged; features may be badly scaled")]
    OracleDiverged,
    #[error("tolerance oracle needs a non-empty parameter grid")]
    EmptyGrid,
    #[error("tolerance oracle needs at least one noise draw")]
    ZeroDraws,
    #[error("tolerance oracle only supports the uniform noise model")]
    NotUniform,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Soft diagnostics from [`NoiseSpec::validate`]: configurations that are
/// legal to run but fall outside the noise-tolerance guarantees.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseWarning {
    /// Uniform rate at or above `(K - 1) / K`; the affine identity's slope
    /// is no longer positive.
    UniformRateBeyondTolerance { rate: f64, threshold: f64 },
    /// An off-diagonal entry at or above its row's diagonal: the true class
    /// is no longer the most likely observed label for that pair.
    ClassPairBeyondTolerance { from: usize, to: usize },
    /// Instance-dependent peak rate at or above `(K - 1) / K`.
    PeakRateBeyondTolerance { max_rate: f64, threshold: f64 },
}

/// How to corrupt labels.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "model"))]
pub enum NoiseModel {
    /// With probability `rate`, replace the label by a uniformly random
    /// *other* class.
    Uniform { rate: f64 },
    /// `matrix[i][j]` is the probability that true class `i` is observed as
    /// class `j`; rows must sum to 1.
    ClassDependent { matrix: Vec<Vec<f64>> },
    /// Flip with probability `max_rate * exp(-margin / tau)` (capped at
    /// `max_rate`), where the margin is the signed distance to the nearest
    /// decision boundary of a separator fit on the uncorrupted labels.
    InstanceDependent { max_rate: f64, tau: f64 },
}

/// A noise model plus the seed that drives the corruption draws.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseSpec {
    pub model: NoiseModel,
    pub seed: u64,
}

impl NoiseSpec {
    /// Checks hard invariants against a class count and collects soft
    /// warnings about configurations outside the tolerance guarantees.
    pub fn validate(&self, num_classes: usize) -> Result<Vec<NoiseWarning>, NoiseError> {
        let k = num_classes as f64;
        let threshold = (k - 1.0) / k;
        let mut warnings = Vec::new();
        match &self.model {
            NoiseModel::Uniform { rate } => {
                if !rate.is_finite() || !(0.0..1.0).contains(rate) {
                    return Err(NoiseError::InvalidRate(*rate));
                }
                if num_classes < 2 && *rate > 0.0 {
                    return Err(NoiseError::SingleClass);
                }
                if *rate >= threshold {
                    warnings.push(NoiseWarning::UniformRateBeyondTolerance {
                        rate: *rate,
                        threshold,
                    });
                }
            }
            NoiseModel::ClassDependent { matrix } => {
                if matrix.len() != num_classes {
                    return Err(NoiseError::MatrixShape { expected: num_classes });
                }
                for (i, row) in matrix.iter().enumerate() {
                    if row.len() != num_classes {
                        return Err(NoiseError::MatrixShape { expected: num_classes });
                    }
                    let mut sum = 0.0;
                    for (j, &p) in row.iter().enumerate() {
                        if !p.is_finite() || p < 0.0 {
                            return Err(NoiseError::NegativeEntry { row: i, col: j });
                        }
                        sum += p;
                    }
                    if math::abs(sum - 1.0) > 1e-9 {
                        return Err(NoiseError::MatrixRowSum { row: i, sum });
                    }
                    for (j, &p) in row.iter().enumerate() {
                        if j != i && p >= row[i] {
                            warnings.push(NoiseWarning::ClassPairBeyondTolerance {
                                from: i,
                                to: j,
                            });
                        }
                    }
                }
            }
            NoiseModel::InstanceDependent { max_rate, tau } => {
                if !max_rate.is_finite() || !(0.0..1.0).contains(max_rate) {
                    return Err(NoiseError::InvalidRate(*max_rate));
                }
                if !tau.is_finite() || *tau <= 0.0 {
                    return Err(NoiseError::InvalidTau(*tau));
                }
                if num_classes < 2 && *max_rate > 0.0 {
                    return Err(NoiseError::SingleClass);
                }
                if *max_rate >= threshold {
                    warnings.push(NoiseWarning::PeakRateBeyondTolerance {
                        max_rate: *max_rate,
                        threshold,
                    });
                }
            }
        }
        Ok(warnings)
    }
}

/// Replaces the current label by a uniformly random other class.
fn flip_uniform(label: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut other = rng.random_range(0..num_classes - 1);
    if other >= label {
        other += 1;
    }
    other
}

/// Corrupts the labels of a dataset according to the noise spec.
///
/// The input labels are treated as ground truth; the output dataset carries
/// the corrupted labels, `clean: Some(new == original)` on every example,
/// and [`Provenance::NoiseInjected`].
pub fn inject_noise(dataset: &Dataset, spec: &NoiseSpec) -> Result<Dataset, NoiseError> {
    spec.validate(dataset.num_classes())?;
    let k = dataset.num_classes();
    let mut rng = rng_from(derive_seed(spec.seed, "noise", 0));
    let originals: Vec<usize> = dataset.labels().collect();

    let labels: Vec<usize> = match &spec.model {
        NoiseModel::Uniform { rate } => originals
            .iter()
            .map(|&y| {
                if rng.random::<f64>() < *rate {
                    flip_uniform(y, k, &mut rng)
                } else {
                    y
                }
            })
            .collect(),
        NoiseModel::ClassDependent { matrix } => originals
            .iter()
            .map(|&y| {
                let u = rng.random::<f64>();
                let mut cumulative = 0.0;
                let row = &matrix[y];
                for (j, &p) in row.iter().enumerate() {
                    cumulative += p;
                    if u < cumulative {
                        return j;
                    }
                }
                // Rounding can leave the final cumulative a hair below 1.
                k - 1
            })
            .collect(),
        NoiseModel::InstanceDependent { max_rate, tau } => {
            let margins = oracle_margins(dataset)?;
            originals
                .iter()
                .zip(&margins)
                .map(|(&y, &margin)| {
                    let rate = (max_rate * math::exp(-margin / tau)).min(*max_rate);
                    if rng.random::<f64>() < rate {
                        flip_uniform(y, k, &mut rng)
                    } else {
                        y
                    }
                })
                .collect()
        }
    };

    let clean: Vec<bool> = labels.iter().zip(&originals).map(|(a, b)| a == b).collect();
    Ok(dataset
        .with_labels(&labels, &clean, Provenance::NoiseInjected)
        .expect("relabeling within the class range preserves dataset invariants"))
}

/// Fits a linear separator to the dataset's labels by deterministic
/// full-batch gradient descent and returns each example's signed geometric
/// margin: the distance to the nearest decision boundary, negative when the
/// example is misclassified. Scale-invariant in the separator's parameters.
pub fn oracle_margins(dataset: &Dataset) -> Result<Vec<f64>, NoiseError> {
    let dim = match dataset.feature_kind() {
        FeatureKind::Vector { dim } => dim,
        FeatureKind::Text => return Err(NoiseError::NeedsVectors),
    };
    let k = dataset.num_classes();
    let mut params = ClassifierParams::zeros(Arch::Linear, k, dim)?;
    for _ in 0..ORACLE_ITERS {
        let grad =
            losses::dataset_loss_gradient(&params, dataset, &LossKind::CrossEntropy, None)
                .map_err(|_| NoiseError::OracleDiverged)?;
        for (p, g) in params.values_mut().iter_mut().zip(&grad) {
            *p -= ORACLE_STEP * g;
        }
    }
    if params.values().iter().any(|v| !v.is_finite()) {
        return Err(NoiseError::OracleDiverged);
    }

    let values = params.values().to_vec();
    let margins = par::map_indexed(dataset.len(), |i| {
        let x = dataset.vector(i);
        let fwd = model::forward(&params, x);
        let y = dataset.example(i).label;
        let mut margin = f64::INFINITY;
        for j in 0..k {
            if j == y {
                continue;
            }
            let mut norm_sq = 0.0;
            for c in 0..dim {
                let diff = values[y * dim + c] - values[j * dim + c];
                norm_sq += diff * diff;
            }
            let norm = math::sqrt(norm_sq);
            if norm < 1e-12 {
                continue; // identical rows never form a boundary
            }
            margin = margin.min((fwd.logits[y] - fwd.logits[j]) / norm);
        }
        if margin == f64::INFINITY {
            0.0
        } else {
            margin
        }
    });
    Ok(margins)
}

/// One grid point of a [`ToleranceReport`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TolerancePoint {
    /// Mean loss under the true labels.
    pub clean_loss: f64,
    /// Mean loss under resampled noisy labels, averaged over the draws.
    pub noisy_loss: f64,
    /// The affine prediction `slope * clean + intercept`; `None` for
    /// cross-entropy, which has no label-sum constant.
    pub predicted_loss: Option<f64>,
    /// `noisy_loss - predicted_loss`, when the prediction exists.
    pub deviation: Option<f64>,
}

/// Empirical check of the uniform-noise identity over a parameter grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToleranceReport {
    pub points: Vec<TolerancePoint>,
    /// Largest absolute deviation from the affine prediction, when defined.
    pub max_abs_deviation: Option<f64>,
    /// `(K - 1 - K eta) / (K - 1)`.
    pub theoretical_slope: f64,
    /// `eta C / (K - 1)`, when the loss has a label-sum constant `C`.
    pub theoretical_intercept: Option<f64>,
    /// Least-squares fit of noisy means against clean losses.
    pub best_fit_slope: f64,
    pub best_fit_intercept: f64,
    pub argmin_clean: usize,
    pub argmin_noisy: usize,
    /// Whether both objectives pick the same grid point.
    pub argmin_preserved: bool,
}

/// Measures, over a grid of parameters, how the mean loss under freshly
/// resampled uniform label noise relates to the mean loss under the true
/// labels. Noise draws are shared across grid points (common random
/// numbers), so the argmin comparison is not clouded by independent
/// sampling jitter.
pub fn tolerance_oracle(
    grid: &[ClassifierParams],
    clean: &Dataset,
    spec: &NoiseSpec,
    kind: &LossKind,
    draws: usize,
) -> Result<ToleranceReport, NoiseError> {
    let rate = match &spec.model {
        NoiseModel::Uniform { rate } => *rate,
        _ => return Err(NoiseError::NotUniform),
    };
    spec.validate(clean.num_classes())?;
    if grid.is_empty() {
        return Err(NoiseError::EmptyGrid);
    }
    if draws == 0 {
        return Err(NoiseError::ZeroDraws);
    }

    let n = clean.len();
    let k = clean.num_classes();
    let originals: Vec<usize> = clean.labels().collect();

    // Pre-draw the noisy label sets, shared by every grid point.
    let noisy_labels: Vec<Vec<usize>> = (0..draws)
        .map(|r| {
            let mut rng = rng_from(derive_seed(spec.seed, "tolerance", r as u64));
            originals
                .iter()
                .map(|&y| {
                    if rng.random::<f64>() < rate {
                        flip_uniform(y, k, &mut rng)
                    } else {
                        y
                    }
                })
                .collect()
        })
        .collect();

    let slope = (k as f64 - 1.0 - k as f64 * rate) / (k as f64 - 1.0);
    let intercept = kind.symmetric_constant(k).map(|c| rate * c / (k as f64 - 1.0));

    for params in grid {
        model::check_compatible(params, clean)?;
    }
    let points: Vec<TolerancePoint> = par::map_indexed(grid.len(), |g| {
        let params = &grid[g];
        // Per-example loss against every possible label, computed once.
        let table: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let fwd = model::forward(params, clean.vector(i));
                let pred =
                    model::Prediction { logits: fwd.logits, probabilities: fwd.probs };
                (0..k).map(|c| kind.example_loss(&pred, c)).collect()
            })
            .collect();
        let clean_loss =
            (0..n).map(|i| table[i][originals[i]]).sum::<f64>() / n as f64;
        let noisy_loss = noisy_labels
            .iter()
            .map(|labels| {
                (0..n).map(|i| table[i][labels[i]]).sum::<f64>() / n as f64
            })
            .sum::<f64>()
            / draws as f64;
        let predicted_loss = intercept.map(|b| slope * clean_loss + b);
        let deviation = predicted_loss.map(|p| noisy_loss - p);
        TolerancePoint { clean_loss, noisy_loss, predicted_loss, deviation }
    });

    let max_abs_deviation = points
        .iter()
        .filter_map(|p| p.deviation)
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(math::abs(d), |m| m.max(math::abs(d)))));

    let (best_fit_slope, best_fit_intercept) =
        least_squares(&points.iter().map(|p| (p.clean_loss, p.noisy_loss)).collect::<Vec<_>>());
    let argmin_clean = argmin_by(&points, |p| p.clean_loss);
    let argmin_noisy = argmin_by(&points, |p| p.noisy_loss);

    Ok(ToleranceReport {
        points,
        max_abs_deviation,
        theoretical_slope: slope,
        theoretical_intercept: intercept,
        best_fit_slope,
        best_fit_intercept,
        argmin_clean,
        argmin_noisy,
        argmin_preserved: argmin_clean == argmin_noisy,
    })
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (x, y) in points {
        cov += (x - mean_x) * (y - mean_y);
        var += (x - mean_x) * (x - mean_x);
    }
    if var < 1e-18 {
        return (0.0, mean_y);
    }
    let slope = cov / var;
    (slope, mean_y - slope * mean_x)
}

fn argmin_by(points: &[TolerancePoint], f: impl Fn(&TolerancePoint) -> f64) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        if f(p) < f(&points[best]) {
            best = i;
        }
    }
    best
}
