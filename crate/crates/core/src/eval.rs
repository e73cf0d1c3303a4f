//! Evaluation tools: separation quality of scores against clean flags,
//! weight histograms, loss-surface probes, cross-loss training curves, and
//! Self-BLEU for text corpora.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::StandardNormal;

use crate::bilevel::{train_loop, BilevelError, TrainConfig};
use crate::data::Dataset;
use crate::losses::{self, LossError, LossKind, RobustLoss};
use crate::math;
use crate::model::{self, ClassifierParams, ModelError};
use crate::par;
use crate::seed::{derive_seed, rng_from};
use rand::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("got {scores} scores for {flags} flags")]
    LengthMismatch { scores: usize, flags: usize },
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("need at least one clean and one noisy example to measure separation")]
    DegenerateFlags,
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("histogram input {0} outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("input must not be empty")]
    EmptyInput,
    #[error("surface grid needs at least 3 steps per axis, got {0}")]
    TooFewSteps(usize),
    #[error("surface range must lie in (0, 1], got {0}")]
    RangeOutOfBounds(f64),
    #[error("surface probe needs at least one loss kind")]
    NoLossKinds,
    #[error("self-BLEU needs at least 2 texts, got {0}")]
    TooFewTexts(usize),
    #[error("self-BLEU sample size must be at least 1")]
    ZeroSample,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] BilevelError),
}

/// Area under the ROC curve of `scores` as a detector of `clean[i]`,
/// computed rank-wise (Mann-Whitney) with tied scores contributing 1/2.
///
/// 1.0 means every clean example outscores every noisy one; 0.5 is chance.
pub fn separation_auroc(scores: &[f64], clean: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != clean.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), flags: clean.len() });
    }
    if scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let n_clean = clean.iter().filter(|c| **c).count();
    let n_noisy = clean.len() - n_clean;
    if n_clean == 0 || n_noisy == 0 {
        return Err(EvalError::DegenerateFlags);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("scores are finite"));

    // Average ranks over tied groups, 1-based.
    let mut clean_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let average_rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            if clean[i] {
                clean_rank_sum += average_rank;
            }
        }
        start = end;
    }

    let n_c = n_clean as f64;
    Ok((clean_rank_sum - n_c * (n_c + 1.0) / 2.0) / (n_c * n_noisy as f64))
}

/// Histogram of values in `[0, 1]` over `bins` equal-width bins.
///
/// A value lands in bin `floor(value * bins)`, except 1.0, which belongs to
/// the last bin; so bin boundaries are left-inclusive.
pub fn weight_histogram(weights: &[f64], bins: usize) -> Result<Vec<u64>, EvalError> {
    if bins < 2 {
        return Err(EvalError::TooFewBins(bins));
    }
    let mut counts = vec![0u64; bins];
    for &w in weights {
        if !w.is_finite() || !(0.0..=1.0).contains(&w) {
            return Err(EvalError::ValueOutOfRange(w));
        }
        let bin = (math::floor(w * bins as f64) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    Ok(counts)
}

/// Overlap coefficient of the empirical distributions of two samples:
/// both are histogrammed over their shared range and the minimum of the
/// normalized counts is summed. 1.0 means indistinguishable, 0.0 disjoint.
pub fn histogram_overlap(a: &[f64], b: &[f64], bins: usize) -> Result<f64, EvalError> {
    if bins < 2 {
        return Err(EvalError::TooFewBins(bins));
    }
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(1.0); // identical constants: fully overlapping
    }
    let width = hi - lo;
    let count = |sample: &[f64]| {
        let mut counts = vec![0.0; bins];
        for &v in sample {
            let bin = ((((v - lo) / width) * bins as f64) as usize).min(bins - 1);
            counts[bin] += 1.0 / sample.len() as f64;
        }
        counts
    };
    let ca = count(a);
    let cb = count(b);
    Ok(ca.iter().zip(&cb).map(|(x, y)| x.min(*y)).sum())
}

/// Grid for [`loss_surface`]: `steps x steps` points spanning
/// `[-range, range]` on both axes. An odd `steps` puts the center point on
/// the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub steps: usize,
    pub range: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { steps: 21, range: 1.0 }
    }
}

/// One loss's values over the probe grid; `values[i][j]` is the loss at
/// `center + alphas[i] * u + betas[j] * v`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossSurface {
    pub kind: LossKind,
    pub values: Vec<Vec<f64>>,
}

/// A two-dimensional slice through parameter space around a center point.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurfaceProbe {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// The two random unit-norm directions that span the slice.
    pub direction_u: Vec<f64>,
    pub direction_v: Vec<f64>,
    pub surfaces: Vec<LossSurface>,
}

impl SurfaceProbe {
    /// Fraction of interior grid cells where the central-difference
    /// gradient norm falls below `threshold` — a crude but effective
    /// flatness measure. `None` if `surface` is out of range.
    pub fn flat_fraction(&self, surface: usize, threshold: f64) -> Option<f64> {
        let values = &self.surfaces.get(surface)?.values;
        let steps = self.alphas.len();
        let h = (self.alphas[steps - 1] - self.alphas[0]) / (steps - 1) as f64;
        let mut flat = 0usize;
        let mut total = 0usize;
        for i in 1..steps - 1 {
            for j in 1..steps - 1 {
                let ga = (values[i + 1][j] - values[i - 1][j]) / (2.0 * h);
                let gb = (values[i][j + 1] - values[i][j - 1]) / (2.0 * h);
                total += 1;
                if math::sqrt(ga * ga + gb * gb) < threshold {
                    flat += 1;
                }
            }
        }
        Some(flat as f64 / total as f64)
    }

    /// Grid coordinates of the smallest value, ties toward smaller indices.
    pub fn min_cell(&self, surface: usize) -> Option<(usize, usize)> {
        let values = &self.surfaces.get(surface)?.values;
        let mut best = (0, 0);
        for (i, row) in values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v < values[best.0][best.1] {
                    best = (i, j);
                }
            }
        }
        Some(best)
    }
}

/// Evaluates each loss on a plane through `center` spanned by two seeded
/// random unit directions, over the dataset (unweighted).
pub fn loss_surface(
    center: &ClassifierParams,
    data: &Dataset,
    kinds: &[LossKind],
    grid: &GridSpec,
    seed: u64,
) -> Result<SurfaceProbe, EvalError> {
    if kinds.is_empty() {
        return Err(EvalError::NoLossKinds);
    }
    if grid.steps < 3 {
        return Err(EvalError::TooFewSteps(grid.steps));
    }
    if !grid.range.is_finite() || grid.range <= 0.0 || grid.range > 1.0 {
        return Err(EvalError::RangeOutOfBounds(grid.range));
    }
    model::check_compatible(center, data)?;

    let p = center.values().len();
    let direction = |tag: &str| -> Vec<f64> {
        let mut rng = rng_from(derive_seed(seed, tag, 0));
        let mut d: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = math::sqrt(d.iter().map(|v| v * v).sum());
        for v in &mut d {
            *v /= norm;
        }
        d
    };
    let u = direction("surface-u");
    let v = direction("surface-v");

    let steps = grid.steps;
    let coords: Vec<f64> = (0..steps)
        .map(|i| -grid.range + 2.0 * grid.range * i as f64 / (steps - 1) as f64)
        .collect();

    // One forward pass per example per grid point serves every loss kind.
    let cells: Vec<Vec<f64>> = par::map_indexed(steps * steps, |cell| {
        let (i, j) = (cell / steps, cell % steps);
        let values: Vec<f64> = center
            .values()
            .iter()
            .zip(u.iter().zip(&v))
            .map(|(c, (ui, vi))| c + coords[i] * ui + coords[j] * vi)
            .collect();
        let probe = ClassifierParams::from_values(
            center.arch(),
            center.num_classes(),
            center.feature_dim(),
            values,
        )
        .expect("probe points keep the center's shape");
        let mut sums = vec![0.0; kinds.len()];
        for e in 0..data.len() {
            let fwd = model::forward(&probe, data.vector(e));
            let pred = model::Prediction { logits: fwd.logits, probabilities: fwd.probs };
            let label = data.example(e).label;
            for (s, kind) in sums.iter_mut().zip(kinds) {
                *s += kind.example_loss(&pred, label);
            }
        }
        for s in &mut sums {
            *s /= data.len() as f64;
        }
        sums
    });

    let surfaces = kinds
        .iter()
        .enumerate()
        .map(|(ki, kind)| LossSurface {
            kind: *kind,
            values: (0..steps)
                .map(|i| (0..steps).map(|j| cells[i * steps + j][ki]).collect())
                .collect(),
        })
        .collect();

    Ok(SurfaceProbe {
        alphas: coords.clone(),
        betas: coords,
        direction_u: u,
        direction_v: v,
        surfaces,
    })
}

/// One point of a cross-loss training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossCurvePoint {
    /// 0 is the untrained initialization.
    pub epoch: usize,
    /// Cross-entropy on the train split.
    pub ce: f64,
    /// Reverse cross-entropy on the train split.
    pub rce: f64,
}

/// Trains with `train_kind` and records both cross-entropy and reverse
/// cross-entropy on the training set after every epoch, starting with the
/// untrained initialization at epoch 0.
pub fn cross_loss_curves(
    train: &Dataset,
    config: &TrainConfig,
    train_kind: &LossKind,
    rce: &RobustLoss,
) -> Result<Vec<LossCurvePoint>, EvalError> {
    config.validate()?;
    let dim = train.feature_dim().ok_or(ModelError::TextFeatures)?;
    let init = ClassifierParams::init(config.arch, train.num_classes(), dim, config.seed)?;

    let measure = |epoch: usize, params: &ClassifierParams| -> Result<LossCurvePoint, LossError> {
        Ok(LossCurvePoint {
            epoch,
            ce: losses::dataset_loss(params, train, &LossKind::CrossEntropy, None)?,
            rce: losses::dataset_loss(params, train, &rce.kind(), None)?,
        })
    };

    let mut points = vec![measure(0, &init)?];
    let mut deferred: Option<LossError> = None;
    train_loop(
        train,
        train_kind,
        None,
        &init,
        config.epochs,
        config.step_size,
        config.batch_size,
        config.optimizer,
        config.seed,
        |epoch, params| {
            if deferred.is_some() {
                return;
            }
            match measure(epoch + 1, params) {
                Ok(point) => points.push(point),
                Err(e) => deferred = Some(e),
            }
        },
    )?;
    if let Some(e) = deferred {
        return Err(e.into());
    }
    Ok(points)
}

/// Corpus-level Self-BLEU with up to 4-gram precision: the mean, over a
/// seeded sample of hypotheses, of each text's BLEU against all the others.
/// High values mean a repetitive corpus.
///
/// Tokens are whitespace-separated; n-gram precisions are uniformly
/// weighted and clipped against the best reference count; a level with no
/// matches uses an epsilon match count of `1e-9`, and a level with no
/// n-grams at all (hypothesis shorter than `n`) contributes a precision of
/// `1e-9`; the brevity penalty uses the reference length closest to the
/// hypothesis, ties going to the shorter reference.
pub fn self_bleu4(texts: &[String], sample: usize, seed: u64) -> Result<f64, EvalError> {
    if texts.len() < 2 {
        return Err(EvalError::TooFewTexts(texts.len()));
    }
    if sample == 0 {
        return Err(EvalError::ZeroSample);
    }

    let tokens: Vec<Vec<&str>> = texts.iter().map(|t| t.split_whitespace().collect()).collect();

    // For clipping we need, per n-gram, the best count over all references
    // of a hypothesis, i.e. over all texts except itself; keeping the two
    // best owners suffices.
    type GramKey<'a> = &'a [&'a str];
    struct Best {
        best: usize,
        best_owner: usize,
        second: usize,
    }
    let mut per_text_counts: Vec<[BTreeMap<GramKey, usize>; 4]> = Vec::new();
    for toks in &tokens {
        let mut maps: [BTreeMap<GramKey, usize>; 4] = Default::default();
        for (n, map) in maps.iter_mut().enumerate() {
            if toks.len() < n + 1 {
                continue;
            }
            for gram in toks.windows(n + 1) {
                *map.entry(gram).or_insert(0) += 1;
            }
        }
        per_text_counts.push(maps);
    }
    let mut best_counts: [BTreeMap<GramKey, Best>; 4] = Default::default();
    for (owner, maps) in per_text_counts.iter().enumerate() {
        for (n, map) in maps.iter().enumerate() {
            for (&gram, &count) in map {
                best_counts[n]
                    .entry(gram)
                    .and_modify(|b| {
                        if count > b.best {
                            b.second = b.best;
                            b.best = count;
                            b.best_owner = owner;
                        } else if count > b.second {
                            b.second = count;
                        }
                    })
                    .or_insert(Best { best: count, best_owner: owner, second: 0 });
            }
        }
    }

    let sample_size = sample.min(texts.len());
    let mut order: Vec<usize> = (0..texts.len()).collect();
    let mut rng = rng_from(derive_seed(seed, "bleu", 0));
    order.shuffle(&mut rng);
    let chosen = &order[..sample_size];

    let total: f64 = chosen
        .iter()
        .map(|&h| {
            let hyp_len = tokens[h].len();
            if hyp_len == 0 {
                return 0.0;
            }
            // Reference length closest to the hypothesis, shorter on ties.
            let mut ref_len = usize::MAX;
            for (i, toks) in tokens.iter().enumerate() {
                if i == h {
                    continue;
                }
                let candidate = toks.len();
                let better = match ref_len {
                    usize::MAX => true,
                    r => {
                        let (dc, dr) = (candidate.abs_diff(hyp_len), r.abs_diff(hyp_len));
                        dc < dr || (dc == dr && candidate < r)
                    }
                };
                if better {
                    ref_len = candidate;
                }
            }
            let brevity = if hyp_len >= ref_len {
                1.0
            } else {
                math::exp(1.0 - ref_len as f64 / hyp_len as f64)
            };

            let mut log_precision_sum = 0.0;
            for n in 0..4 {
                let total_grams = hyp_len.saturating_sub(n);
                let mut clipped = 0usize;
                for (&gram, &count) in &per_text_counts[h][n] {
                    let best = &best_counts[n][gram];
                    let reference_max =
                        if best.best_owner == h { best.second } else { best.best };
                    clipped += count.min(reference_max);
                }
                let precision = if total_grams == 0 {
                    1e-9
                } else {
                    (clipped as f64).max(1e-9) / total_grams as f64
                };
                log_precision_sum += 0.25 * math::ln(precision);
            }
            brevity * math::exp(log_precision_sum)
        })
        .sum();

    Ok(total / sample_size as f64)
}
