//! Featurization and a small differentiable softmax classifier.
//!
//! The classifier is either linear or a one-hidden-layer tanh network.
//! Parameters live in one flat `Vec<f64>` with a documented layout, which
//! keeps gradients, optimizer state, serialization, and direction vectors
//! for loss-surface probes all trivially aligned. All gradients are
//! hand-derived; unit tests check them against central finite differences.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::{Dataset, Example, FeatureKind, Features};
use crate::math;
use crate::par;
use crate::seed::{derive_seed, rng_from};

/// Classifier architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Arch {
    /// Logits are `W x + b`.
    Linear,
    /// Logits are `W2 tanh(W1 x + b1) + b2`.
    OneHidden { hidden: usize },
}

impl Arch {
    /// Number of parameters for `num_classes` classes over `feature_dim`
    /// inputs.
    pub fn param_count(&self, num_classes: usize, feature_dim: usize) -> usize {
        match *self {
            Arch::Linear => num_classes * feature_dim + num_classes,
            Arch::OneHidden { hidden } => {
                hidden * feature_dim + hidden + num_classes * hidden + num_classes
            }
        }
    }
}

/// Errors from model construction and evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("expected feature vectors of length {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("this operation requires dense feature vectors, but the dataset holds text")]
    TextFeatures,
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("parameter vector contains a non-finite value")]
    NonFiniteParams,
    #[error("expected {expected} parameters for this architecture, got {found}")]
    WrongParameterCount { expected: usize, found: usize },
    #[error("model has {params} classes but the dataset declares {dataset}")]
    ClassMismatch { params: usize, dataset: usize },
    #[error("hidden layer width must be at least 1")]
    ZeroHidden,
    #[error("feature dimension must be at least 1")]
    ZeroDim,
    #[error("model needs at least one class")]
    NoClasses,
    #[error("identity featurization requires vector data of length {expected}")]
    IdentityNeedsVectors { expected: usize },
    #[error("hashed n-gram featurization requires text data")]
    HashedNeedsText,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
}

/// Parameters of a classifier, stored flat.
///
/// Layout for `Linear`: `W` (`K x d`, row-major), then `b` (`K`).
/// Layout for `OneHidden { hidden: h }`: `W1` (`h x d`, row-major), `b1`
/// (`h`), `W2` (`K x h`, row-major), `b2` (`K`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    arch: Arch,
    num_classes: usize,
    feature_dim: usize,
    values: Vec<f64>,
}

impl ClassifierParams {
    /// All-zero parameters.
    pub fn zeros(arch: Arch, num_classes: usize, feature_dim: usize) -> Result<Self, ModelError> {
        check_shape(arch, num_classes, feature_dim)?;
        let values = vec![0.0; arch.param_count(num_classes, feature_dim)];
        Ok(ClassifierParams { arch, num_classes, feature_dim, values })
    }

    /// Seeded initialization: weights uniform in (-0.01, 0.01), biases zero.
    pub fn init(
        arch: Arch,
        num_classes: usize,
        feature_dim: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut params = Self::zeros(arch, num_classes, feature_dim)?;
        let mut rng = rng_from(derive_seed(seed, "init", 0));
        let mut fill = |range: core::ops::Range<usize>, values: &mut [f64]| {
            for v in &mut values[range] {
                *v = rng.random_range(-0.01..0.01);
            }
        };
        match arch {
            Arch::Linear => {
                let w = 0..num_classes * feature_dim;
                fill(w, &mut params.values);
            }
            Arch::OneHidden { hidden } => {
                let w1 = 0..hidden * feature_dim;
                let w2_start = hidden * feature_dim + hidden;
                let w2 = w2_start..w2_start + num_classes * hidden;
                fill(w1, &mut params.values);
                fill(w2, &mut params.values);
            }
        }
        Ok(params)
    }

    /// Rebuilds parameters from a flat vector in the documented layout.
    pub fn from_values(
        arch: Arch,
        num_classes: usize,
        feature_dim: usize,
        values: Vec<f64>,
    ) -> Result<Self, ModelError> {
        check_shape(arch, num_classes, feature_dim)?;
        let expected = arch.param_count(num_classes, feature_dim);
        if values.len() != expected {
            return Err(ModelError::WrongParameterCount { expected, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteParams);
        }
        Ok(ClassifierParams { arch, num_classes, feature_dim, values })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// The flat parameter vector (see the type docs for the layout).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

fn check_shape(arch: Arch, num_classes: usize, feature_dim: usize) -> Result<(), ModelError> {
    if num_classes == 0 {
        return Err(ModelError::NoClasses);
    }
    if feature_dim == 0 {
        return Err(ModelError::ZeroDim);
    }
    if let Arch::OneHidden { hidden: 0 } = arch {
        return Err(ModelError::ZeroHidden);
    }
    Ok(())
}

/// Output of [`predict`]: raw logits and the softmax distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Forward-pass state kept around for backpropagation.
pub(crate) struct Forward {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// tanh activations, present for the one-hidden architecture.
    pub hidden: Option<Vec<f64>>,
}

pub(crate) fn forward(params: &ClassifierParams, x: &[f64]) -> Forward {
    let k = params.num_classes;
    let d = params.feature_dim;
    let v = &params.values;
    let (logits, hidden) = match params.arch {
        Arch::Linear => {
            let mut logits = vec![0.0; k];
            for (j, logit) in logits.iter_mut().enumerate() {
                let row = &v[j * d..(j + 1) * d];
                *logit = dot(row, x) + v[k * d + j];
            }
            (logits, None)
        }
        Arch::OneHidden { hidden: h } => {
            let b1 = h * d;
            let w2 = b1 + h;
            let b2 = w2 + k * h;
            let mut act = vec![0.0; h];
            for (r, a) in act.iter_mut().enumerate() {
                let row = &v[r * d..(r + 1) * d];
                *a = math::tanh(dot(row, x) + v[b1 + r]);
            }
            let mut logits = vec![0.0; k];
            for (j, logit) in logits.iter_mut().enumerate() {
                let row = &v[w2 + j * h..w2 + (j + 1) * h];
                *logit = dot(row, &act) + v[b2 + j];
            }
            (logits, Some(act))
        }
    };
    let probs = softmax(&logits);
    Forward { logits, probs, hidden }
}

/// Numerically stable softmax; the result sums to 1 up to rounding.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| math::exp(z - max)).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// `log(sum_j exp(z_j))`, shifted for stability.
pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + math::ln(logits.iter().map(|z| math::exp(z - max)).sum())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs the classifier on one feature vector.
pub fn predict(params: &ClassifierParams, x: &[f64]) -> Result<Prediction, ModelError> {
    if x.len() != params.feature_dim {
        return Err(ModelError::DimensionMismatch {
            expected: params.feature_dim,
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    let fwd = forward(params, x);
    Ok(Prediction { logits: fwd.logits, probabilities: fwd.probs })
}

/// Accumulates `weight * d(loss)/d(params)` into `out`, given the gradient
/// `delta` of the loss with respect to the logits.
pub(crate) fn backprop_logit_delta(
    params: &ClassifierParams,
    x: &[f64],
    fwd: &Forward,
    delta: &[f64],
    weight: f64,
    out: &mut [f64],
) {
    let k = params.num_classes;
    let d = params.feature_dim;
    match params.arch {
        Arch::Linear => {
            for (j, &dj) in delta.iter().enumerate() {
                let g = weight * dj;
                let row = &mut out[j * d..(j + 1) * d];
                for (o, &xi) in row.iter_mut().zip(x) {
                    *o += g * xi;
                }
                out[k * d + j] += g;
            }
        }
        Arch::OneHidden { hidden: h } => {
            let act = fwd.hidden.as_ref().expect("one-hidden forward keeps activations");
            let b1 = h * d;
            let w2 = b1 + h;
            let b2 = w2 + k * h;
            // Output layer.
            for (j, &dj) in delta.iter().enumerate() {
                let g = weight * dj;
                let row = &mut out[w2 + j * h..w2 + (j + 1) * h];
                for (o, &ar) in row.iter_mut().zip(act) {
                    *o += g * ar;
                }
                out[b2 + j] += g;
            }
            // Backprop into the hidden layer: d tanh(u) = 1 - tanh(u)^2.
            for (r, &ar) in act.iter().enumerate() {
                let upstream: f64 = delta
                    .iter()
                    .enumerate()
                    .map(|(j, &dj)| dj * params.values[w2 + j * h + r])
                    .sum();
                let g = weight * upstream * (1.0 - ar * ar);
                let row = &mut out[r * d..(r + 1) * d];
                for (o, &xi) in row.iter_mut().zip(x) {
                    *o += g * xi;
                }
                out[b1 + r] += g;
            }
        }
    }
}

/// Computes `< d(loss)/d(params), other >` for one example without
/// materializing the per-sample gradient. `delta` is the loss gradient with
/// respect to the logits; `other` is a flat vector in parameter layout.
pub(crate) fn dot_backprop_logit_delta(
    params: &ClassifierParams,
    x: &[f64],
    fwd: &Forward,
    delta: &[f64],
    other: &[f64],
) -> f64 {
    let k = params.num_classes;
    let d = params.feature_dim;
    match params.arch {
        Arch::Linear => {
            let mut acc = 0.0;
            for (j, &dj) in delta.iter().enumerate() {
                let row = &other[j * d..(j + 1) * d];
                acc += dj * (dot(row, x) + other[k * d + j]);
            }
            acc
        }
        Arch::OneHidden { hidden: h } => {
            let act = fwd.hidden.as_ref().expect("one-hidden forward keeps activations");
            let b1 = h * d;
            let w2 = b1 + h;
            let b2 = w2 + k * h;
            let mut acc = 0.0;
            for (j, &dj) in delta.iter().enumerate() {
                let row = &other[w2 + j * h..w2 + (j + 1) * h];
                acc += dj * (dot(row, act) + other[b2 + j]);
            }
            for (r, &ar) in act.iter().enumerate() {
                let upstream: f64 = delta
                    .iter()
                    .enumerate()
                    .map(|(j, &dj)| dj * params.values[w2 + j * h + r])
                    .sum();
                let g = upstream * (1.0 - ar * ar);
                let row = &other[r * d..(r + 1) * d];
                acc += g * (dot(row, x) + other[b1 + r]);
            }
            acc
        }
    }
}

/// Gradient of the cross-entropy loss of one example with respect to the
/// parameters, as a flat vector in parameter layout.
pub fn per_sample_ce_gradient(
    params: &ClassifierParams,
    x: &[f64],
    label: usize,
) -> Result<Vec<f64>, ModelError> {
    if x.len() != params.feature_dim {
        return Err(ModelError::DimensionMismatch {
            expected: params.feature_dim,
            found: x.len(),
        });
    }
    if label >= params.num_classes {
        return Err(ModelError::ClassMismatch { params: params.num_classes, dataset: label + 1 });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    let fwd = forward(params, x);
    // d ce / d logits = softmax - one_hot(label).
    let mut delta = fwd.probs.clone();
    delta[label] -= 1.0;
    let mut out = vec![0.0; params.values.len()];
    backprop_logit_delta(params, x, &fwd, &delta, 1.0, &mut out);
    Ok(out)
}

/// Checks that a dataset is usable with the given parameters: dense vectors
/// of the right dimension and a matching class count.
pub(crate) fn check_compatible(
    params: &ClassifierParams,
    dataset: &Dataset,
) -> Result<(), ModelError> {
    match dataset.feature_kind() {
        FeatureKind::Text => return Err(ModelError::TextFeatures),
        FeatureKind::Vector { dim } => {
            if dim != params.feature_dim {
                return Err(ModelError::DimensionMismatch {
                    expected: params.feature_dim,
                    found: dim,
                });
            }
        }
    }
    if dataset.num_classes() != params.num_classes {
        return Err(ModelError::ClassMismatch {
            params: params.num_classes,
            dataset: dataset.num_classes(),
        });
    }
    Ok(())
}

/// Fraction of examples whose argmax prediction matches the label.
///
/// Argmax ties break toward the smaller class index.
pub fn evaluate_accuracy(params: &ClassifierParams, dataset: &Dataset) -> Result<f64, ModelError> {
    check_compatible(params, dataset)?;
    let correct = par::sum_scalar(dataset.len(), |i| {
        let fwd = forward(params, dataset.vector(i));
        let pred = argmax(&fwd.logits);
        if pred == dataset.example(i).label {
            1.0
        } else {
            0.0
        }
    });
    Ok(correct / dataset.len() as f64)
}

/// Index of the largest value; ties go to the smaller index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// How to turn raw examples into the dense vectors the classifier consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FeatureSpec {
    /// Pass vector data through unchanged; errors unless the data already
    /// consists of vectors of length `dim`.
    Identity { dim: usize },
    /// Hash whitespace n-grams (orders `1..=order`) of text into `dim`
    /// signed buckets, then L2-normalize.
    HashedNgram { dim: usize, order: usize },
}

/// Applies a [`FeatureSpec`] to a dataset, producing a vector-mode dataset.
pub fn featurize(dataset: &Dataset, spec: &FeatureSpec) -> Result<Dataset, ModelError> {
    match *spec {
        FeatureSpec::Identity { dim } => {
            if dim == 0 {
                return Err(ModelError::ZeroDim);
            }
            match dataset.feature_kind() {
                FeatureKind::Vector { dim: have } if have == dim => Ok(dataset.clone()),
                _ => Err(ModelError::IdentityNeedsVectors { expected: dim }),
            }
        }
        FeatureSpec::HashedNgram { dim, order } => {
            if dim == 0 {
                return Err(ModelError::ZeroDim);
            }
            if order == 0 {
                return Err(ModelError::ZeroOrder);
            }
            if dataset.feature_kind() != FeatureKind::Text {
                return Err(ModelError::HashedNeedsText);
            }
            let examples: Vec<Example> = dataset
                .examples()
                .iter()
                .map(|ex| {
                    let text = ex.features.as_text().expect("text mode checked above");
                    Example {
                        id: ex.id.clone(),
                        label: ex.label,
                        features: Features::Vector(hash_ngrams(text, dim, order)),
                        clean: ex.clean,
                    }
                })
                .collect();
            Ok(Dataset::new(examples, dataset.num_classes(), dataset.provenance())
                .expect("hashing preserves ids, labels, and dimensions"))
        }
    }
}

/// Signed hashing-trick embedding of whitespace n-grams, L2-normalized.
fn hash_ngrams(text: &str, dim: usize, order: usize) -> Vec<f64> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut acc = vec![0.0; dim];
    for n in 1..=order {
        if tokens.len() < n {
            break;
        }
        for window in tokens.windows(n) {
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            h = fnv1a(h, &[n as u8]);
            for token in window {
                h = fnv1a(h, token.as_bytes());
                h = fnv1a(h, &[0xff]);
            }
            let bucket = (h % dim as u64) as usize;
            let sign = if h & (1 << 63) == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
    }
    let norm = math::sqrt(acc.iter().map(|v| v * v).sum());
    if norm > 0.0 {
        for v in &mut acc {
            *v /= norm;
        }
    }
    acc
}

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
