//! In-memory datasets: examples, validated construction, seeded splits, and
//! a Gaussian-blob generator for controlled experiments.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::math;
use crate::seed::{derive_seed, rng_from};

/// Feature payload of one example: either a dense vector or raw text.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Vector(Vec<f64>),
    Text(String),
}

impl Features {
    /// The dense vector, if this example is in vector mode.
    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Features::Vector(v) => Some(v),
            Features::Text(_) => None,
        }
    }

    /// The raw text, if this example is in text mode.
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Features::Vector(_) => None,
            Features::Text(t) => Some(t),
        }
    }
}

/// One labeled example.
///
/// `clean` is bookkeeping metadata: noise injection records whether the
/// label survived corruption so that evaluation code can measure separation
/// quality afterwards. The learning routines never read it.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: usize,
    pub features: Features,
    pub clean: Option<bool>,
}

impl Example {
    /// Convenience constructor for a vector-mode example with no clean flag.
    pub fn vector(id: impl Into<String>, label: usize, values: Vec<f64>) -> Self {
        Example { id: id.into(), label, features: Features::Vector(values), clean: None }
    }

    /// Convenience constructor for a text-mode example with no clean flag.
    pub fn text(id: impl Into<String>, label: usize, text: impl Into<String>) -> Self {
        Example { id: id.into(), label, features: Features::Text(text.into()), clean: None }
    }

    /// Returns the same example with the clean flag set.
    pub fn with_clean(mut self, clean: bool) -> Self {
        self.clean = Some(clean);
        self
    }
}

/// Whether a dataset carries dense vectors (of one common dimension) or text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Vector { dim: usize },
    Text,
}

/// Where a dataset came from, carried along so downstream artifacts can
/// record it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Provenance {
    /// Loaded from an external file.
    Ingested,
    /// Generated by this crate (e.g. Gaussian blobs).
    Synthetic,
    /// Produced by injecting label noise into another dataset.
    NoiseInjected,
}

/// Errors from dataset construction and splitting.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("dataset must contain at least one example")]
    Empty,
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("example `{id}` has label {label}, but the dataset declares {num_classes} classes")]
    LabelOutOfRange { id: String, label: usize, num_classes: usize },
    #[error("number of classes must be at least 1")]
    NoClasses,
    #[error("example `{id}` mixes feature kinds within one dataset")]
    MixedFeatureKinds { id: String },
    #[error("example `{id}` has {found} features, but the dataset uses {expected}")]
    DimensionMismatch { id: String, expected: usize, found: usize },
    #[error("example `{id}` contains a non-finite feature value")]
    NonFiniteFeature { id: String },
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("split with fraction {fraction} of {total} examples leaves one side empty")]
    DegenerateSplit { fraction: f64, total: usize },
    #[error("blob generation needs at least one sample per class and dimension >= 1")]
    InvalidBlobShape,
    #[error("blob separation must be finite and non-negative, got {0}")]
    InvalidSeparation(f64),
    #[error("subset index {index} out of bounds for dataset of {len} examples")]
    IndexOutOfBounds { index: usize, len: usize },
}

/// A validated, immutable collection of examples.
///
/// Construction enforces the invariants everything downstream relies on:
/// unique ids, labels below the class count, one consistent feature kind,
/// equal vector dimensions, and finite feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_classes: usize,
    kind: FeatureKind,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        examples: Vec<Example>,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self, DataError> {
        if num_classes == 0 {
            return Err(DataError::NoClasses);
        }
        let first = examples.first().ok_or(DataError::Empty)?;
        let kind = match &first.features {
            Features::Vector(v) => FeatureKind::Vector { dim: v.len() },
            Features::Text(_) => FeatureKind::Text,
        };
        let mut ids = BTreeSet::new();
        for ex in &examples {
            if !ids.insert(ex.id.as_str()) {
                return Err(DataError::DuplicateId(ex.id.clone()));
            }
            if ex.label >= num_classes {
                return Err(DataError::LabelOutOfRange {
                    id: ex.id.clone(),
                    label: ex.label,
                    num_classes,
                });
            }
            match (&ex.features, kind) {
                (Features::Vector(v), FeatureKind::Vector { dim }) => {
                    if v.len() != dim {
                        return Err(DataError::DimensionMismatch {
                            id: ex.id.clone(),
                            expected: dim,
                            found: v.len(),
                        });
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(DataError::NonFiniteFeature { id: ex.id.clone() });
                    }
                }
                (Features::Text(_), FeatureKind::Text) => {}
                _ => return Err(DataError::MixedFeatureKinds { id: ex.id.clone() }),
            }
        }
        Ok(Dataset { examples, num_classes, kind, provenance })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_kind(&self) -> FeatureKind {
        self.kind
    }

    /// Vector dimension, or `None` for text datasets.
    pub fn feature_dim(&self) -> Option<usize> {
        match self.kind {
            FeatureKind::Vector { dim } => Some(dim),
            FeatureKind::Text => None,
        }
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    /// # Panics
    ///
    /// Panics if `index >= self.len()`.
    pub fn example(&self, index: usize) -> &Example {
        &self.examples[index]
    }

    /// Labels in example order.
    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.examples.iter().map(|ex| ex.label)
    }

    /// Clean flags in example order (entries are `None` where unknown).
    pub fn clean_flags(&self) -> Vec<Option<bool>> {
        self.examples.iter().map(|ex| ex.clean).collect()
    }

    /// The feature vector of example `index`.
    ///
    /// # Panics
    ///
    /// Panics if the dataset is in text mode or the index is out of bounds;
    /// numeric routines call [`Dataset::feature_dim`] once up front.
    pub(crate) fn vector(&self, index: usize) -> &[f64] {
        self.examples[index]
            .features
            .as_vector()
            .expect("vector() called on a text-mode dataset")
    }

    /// A new dataset holding copies of the examples at `indices`, in the
    /// given order. Provenance is inherited.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, DataError> {
        let mut picked = Vec::with_capacity(indices.len());
        for &i in indices {
            let ex = self
                .examples
                .get(i)
                .ok_or(DataError::IndexOutOfBounds { index: i, len: self.len() })?;
            picked.push(ex.clone());
        }
        Dataset::new(picked, self.num_classes, self.provenance)
    }

    /// Rebuilds the dataset with new labels and clean flags (used by noise
    /// injection). Lengths must match the dataset.
    pub(crate) fn with_labels(
        &self,
        labels: &[usize],
        clean: &[bool],
        provenance: Provenance,
    ) -> Result<Dataset, DataError> {
        debug_assert_eq!(labels.len(), self.len());
        debug_assert_eq!(clean.len(), self.len());
        let examples = self
            .examples
            .iter()
            .zip(labels.iter().zip(clean))
            .map(|(ex, (&label, &is_clean))| Example {
                id: ex.id.clone(),
                label,
                features: ex.features.clone(),
                clean: Some(is_clean),
            })
            .collect();
        Dataset::new(examples, self.num_classes, provenance)
    }
}

/// How to split a dataset into train and validation parts.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitSpec {
    /// Fraction of examples assigned to the train side, strictly in (0, 1).
    pub train_fraction: f64,
    pub seed: u64,
}

/// Splits a dataset into disjoint train and validation parts.
///
/// Examples are shuffled with a seeded RNG; the first
/// `round(train_fraction * N)` of the shuffled order become the train side.
/// Errors if the rounding leaves either side empty.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), DataError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(DataError::InvalidFraction(spec.train_fraction));
    }
    let n = dataset.len();
    let train_len = math::round(spec.train_fraction * n as f64) as usize;
    if train_len == 0 || train_len >= n {
        return Err(DataError::DegenerateSplit { fraction: spec.train_fraction, total: n });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(derive_seed(spec.seed, "split", 0));
    indices.shuffle(&mut rng);
    let train = dataset.subset(&indices[..train_len])?;
    let val = dataset.subset(&indices[train_len..])?;
    Ok((train, val))
}

/// Generates `num_classes` isotropic unit-variance Gaussian blobs with
/// `n_per_class` samples each, in `dim` dimensions.
///
/// Class means are mutually at least `separation` apart: on a circle in the
/// first two dimensions when `dim >= 2`, along the axis when `dim == 1`.
/// Examples arrive class-major with ids `blob-00000`, `blob-00001`, ... and
/// every clean flag set to `Some(true)`.
pub fn make_gaussian_blobs(
    n_per_class: usize,
    num_classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if num_classes == 0 {
        return Err(DataError::NoClasses);
    }
    if n_per_class == 0 || dim == 0 {
        return Err(DataError::InvalidBlobShape);
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(DataError::InvalidSeparation(separation));
    }

    let means = blob_means(num_classes, dim, separation);
    let mut rng = rng_from(derive_seed(seed, "blobs", 0));
    let mut examples = Vec::with_capacity(n_per_class * num_classes);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            let values: Vec<f64> = mean
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let id = format!("blob-{:05}", examples.len());
            examples.push(Example::vector(id, class, values).with_clean(true));
        }
    }
    Dataset::new(examples, num_classes, Provenance::Synthetic)
}

fn blob_means(num_classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut means = alloc::vec![alloc::vec![0.0; dim]; num_classes];
    if num_classes == 1 {
        return means;
    }
    if dim == 1 {
        for (c, mean) in means.iter_mut().enumerate() {
            mean[0] = c as f64 * separation;
        }
        return means;
    }
    // On a circle the closest pair of means are neighbors, at distance
    // 2 R sin(pi / K); choosing R accordingly makes that exactly `separation`.
    let k = num_classes as f64;
    let radius = separation / (2.0 * math::sin(core::f64::consts::PI / k));
    for (c, mean) in means.iter_mut().enumerate() {
        let angle = 2.0 * core::f64::consts::PI * c as f64 / k;
        mean[0] = radius * math::cos(angle);
        mean[1] = radius * math::sin(angle);
    }
    means
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn tiny(n: usize) -> Dataset {
        let examples = (0..n)
            .map(|i| Example::vector(format!("e{i}"), i % 2, vec![i as f64, 1.0]))
            .collect();
        Dataset::new(examples, 2, Provenance::Ingested).unwrap()
    }

    #[test]
    fn new_rejects_duplicate_ids() {
        let examples = vec![
            Example::vector("a", 0, vec![0.0]),
            Example::vector("a", 1, vec![1.0]),
        ];
        assert_eq!(
            Dataset::new(examples, 2, Provenance::Ingested),
            Err(DataError::DuplicateId("a".to_string()))
        );
    }

    #[test]
    fn new_rejects_label_out_of_range() {
        let examples = vec![Example::vector("a", 2, vec![0.0])];
        assert!(matches!(
            Dataset::new(examples, 2, Provenance::Ingested),
            Err(DataError::LabelOutOfRange { label: 2, num_classes: 2, .. })
        ));
    }

    #[test]
    fn new_rejects_mixed_kinds_and_ragged_dims() {
        let mixed = vec![Example::vector("a", 0, vec![0.0]), Example::text("b", 0, "hi")];
        assert!(matches!(
            Dataset::new(mixed, 1, Provenance::Ingested),
            Err(DataError::MixedFeatureKinds { .. })
        ));

        let ragged = vec![
            Example::vector("a", 0, vec![0.0]),
            Example::vector("b", 0, vec![0.0, 1.0]),
        ];
        assert!(matches!(
            Dataset::new(ragged, 1, Provenance::Ingested),
            Err(DataError::DimensionMismatch { expected: 1, found: 2, .. })
        ));
    }

    #[test]
    fn new_rejects_non_finite_features() {
        let examples = vec![Example::vector("a", 0, vec![f64::NAN])];
        assert!(matches!(
            Dataset::new(examples, 1, Provenance::Ingested),
            Err(DataError::NonFiniteFeature { .. })
        ));
    }

    #[test]
    fn blobs_are_deterministic_and_class_major() {
        let a = make_gaussian_blobs(50, 3, 4, 6.0, 9).unwrap();
        let b = make_gaussian_blobs(50, 3, 4, 6.0, 9).unwrap();
        assert_eq!(a, b, "same seed must reproduce the dataset exactly");
        assert_eq!(a.len(), 150);
        assert_eq!(a.feature_dim(), Some(4));
        assert_eq!(a.provenance(), Provenance::Synthetic);
        for (i, ex) in a.examples().iter().enumerate() {
            assert_eq!(ex.id, format!("blob-{i:05}"));
            assert_eq!(ex.label, i / 50, "examples must be ordered class-major");
            assert_eq!(ex.clean, Some(true));
        }
        let c = make_gaussian_blobs(50, 3, 4, 6.0, 10).unwrap();
        assert_ne!(a, c, "different seeds should give different draws");
    }

    #[test]
    fn blob_means_are_separated_and_unit_variance() {
        let sep = 7.0;
        let data = make_gaussian_blobs(4000, 3, 2, sep, 1).unwrap();
        // Empirical class means should sit close to centers that are
        // mutually `sep` apart; empirical variance should be near 1.
        let mut means = vec![vec![0.0; 2]; 3];
        for ex in data.examples() {
            let v = ex.features.as_vector().unwrap();
            means[ex.label][0] += v[0] / 4000.0;
            means[ex.label][1] += v[1] / 4000.0;
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                let dx = means[i][0] - means[j][0];
                let dy = means[i][1] - means[j][1];
                let dist = (dx * dx + dy * dy).sqrt();
                assert!(
                    dist > sep - 0.2,
                    "classes {i} and {j} are {dist:.3} apart, expected about {sep}"
                );
            }
        }
        let var: f64 = data
            .examples()
            .iter()
            .map(|ex| {
                let v = ex.features.as_vector().unwrap();
                let d = v[0] - means[ex.label][0];
                d * d
            })
            .sum::<f64>()
            / data.len() as f64;
        assert!((var - 1.0).abs() < 0.1, "per-coordinate variance {var:.3} should be near 1");
    }

    #[test]
    fn one_class_blobs_center_on_origin() {
        let data = make_gaussian_blobs(2000, 1, 3, 5.0, 2).unwrap();
        let mean0: f64 =
            data.examples().iter().map(|ex| ex.features.as_vector().unwrap()[0]).sum::<f64>()
                / data.len() as f64;
        assert!(mean0.abs() < 0.1);
    }

    #[test]
    fn split_sizes_follow_rounding() {
        let data = tiny(10);
        let (train, val) = split(&data, &SplitSpec { train_fraction: 0.8, seed: 4 }).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));

        // round(0.85 * 10) = 9 (ties round away from zero at 8.5).
        let (train, val) = split(&data, &SplitSpec { train_fraction: 0.85, seed: 4 }).unwrap();
        assert_eq!((train.len(), val.len()), (9, 1));
    }

    #[test]
    fn split_is_a_disjoint_cover_and_deterministic() {
        let data = tiny(37);
        let spec = SplitSpec { train_fraction: 0.7, seed: 11 };
        let (train, val) = split(&data, &spec).unwrap();
        let (train2, val2) = split(&data, &spec).unwrap();
        assert_eq!(train, train2);
        assert_eq!(val, val2);

        let mut seen = BTreeSet::new();
        for ex in train.examples().iter().chain(val.examples()) {
            assert!(seen.insert(ex.id.clone()), "id {} appears on both sides", ex.id);
        }
        assert_eq!(seen.len(), data.len(), "split must cover every example");
    }

    #[test]
    fn split_rejects_degenerate_outcomes() {
        let data = tiny(10);
        assert!(matches!(
            split(&data, &SplitSpec { train_fraction: 0.01, seed: 0 }),
            Err(DataError::DegenerateSplit { .. })
        ));
        assert!(matches!(
            split(&data, &SplitSpec { train_fraction: 0.99, seed: 0 }),
            Err(DataError::DegenerateSplit { .. })
        ));
        assert!(matches!(
            split(&data, &SplitSpec { train_fraction: 1.0, seed: 0 }),
            Err(DataError::InvalidFraction(_))
        ));
    }

    #[test]
    fn subset_picks_in_order_and_checks_bounds() {
        let data = tiny(5);
        let sub = data.subset(&[4, 0, 2]).unwrap();
        assert_eq!(sub.example(0).id, "e4");
        assert_eq!(sub.example(1).id, "e0");
        assert_eq!(sub.example(2).id, "e2");
        assert!(matches!(
            data.subset(&[5]),
            Err(DataError::IndexOutOfBounds { index: 5, len: 5 })
        ));
    }
}
