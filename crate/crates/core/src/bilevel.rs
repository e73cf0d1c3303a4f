//! The bilevel reweighting loop and the shared minibatch training engine.
//!
//! The outer problem adjusts one weight per training example to minimize a
//! noise-robust loss on a (possibly noisy) validation split; the inner
//! problem fits the classifier to the weighted cross-entropy on the train
//! split. One outer iteration runs the inner training for a few epochs,
//! estimates the hypergradient via one-step truncated backpropagation
//! through the final inner update, and takes a clamped gradient step on the
//! weights.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::eval;
use crate::losses::{self, LossError, LossKind, RobustLoss};
use crate::math;
use crate::model::{self, Arch, ClassifierParams, ModelError};
use crate::par;
use crate::seed::{derive_seed, rng_from};

/// Errors from training and the bilevel loop.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BilevelError {
    #[error("outer_iterations must be at least 1")]
    ZeroOuterIterations,
    #[error("inner_epochs_per_outer must be at least 1")]
    ZeroInnerEpochs,
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("step size must be positive and finite, got {0}")]
    InvalidStepSize(f64),
    #[error("{0} must lie in [0, 1] and be finite")]
    WeightOutOfRange(f64),
    #[error("got {weights} weights for {examples} examples")]
    WeightCountMismatch { weights: usize, examples: usize },
    #[error("gradient has {found} entries, expected {expected}")]
    GradientCountMismatch { expected: usize, found: usize },
    #[error("non-finite training loss at epoch {epoch}, batch {batch}; reduce the step size")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite outer loss at iteration {iteration}; reduce the step sizes")]
    NonFiniteOuterLoss { iteration: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-sample quality weights, one per training example, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights {
    values: Vec<f64>,
    iteration: usize,
}

impl SampleWeights {
    /// The starting point of the outer problem: every weight at 0.5.
    pub fn initial(n: usize) -> Self {
        SampleWeights { values: vec![0.5; n], iteration: 0 }
    }

    /// Wraps explicit values, checking they lie in `[0, 1]`.
    pub fn from_values(values: Vec<f64>) -> Result<Self, BilevelError> {
        for &v in &values {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(BilevelError::WeightOutOfRange(v));
            }
        }
        Ok(SampleWeights { values, iteration: 0 })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// How many outer steps produced these weights.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// First-order optimizer for parameter and weight updates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "kind"))]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    /// Adam with the usual defaults (0.9, 0.999, 1e-8).
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// State for applying a sequence of optimizer updates to one vector.
struct OptimizerState {
    optimizer: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    beta1_power: f64,
    beta2_power: f64,
}

impl OptimizerState {
    fn new(optimizer: Optimizer, len: usize) -> Self {
        let state_len = match optimizer {
            Optimizer::Sgd => 0,
            Optimizer::Adam { .. } => len,
        };
        OptimizerState {
            optimizer,
            m: vec![0.0; state_len],
            v: vec![0.0; state_len],
            beta1_power: 1.0,
            beta2_power: 1.0,
        }
    }

    /// Applies one descent update `target -= step * precondition(grad)`.
    fn apply(&mut self, target: &mut [f64], grad: &[f64], step: f64) {
        match self.optimizer {
            Optimizer::Sgd => {
                for (t, g) in target.iter_mut().zip(grad) {
                    *t -= step * g;
                }
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                self.beta1_power *= beta1;
                self.beta2_power *= beta2;
                for ((t, g), (m, v)) in
                    target.iter_mut().zip(grad).zip(self.m.iter_mut().zip(&mut self.v))
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / (1.0 - self.beta1_power);
                    let v_hat = *v / (1.0 - self.beta2_power);
                    *t -= step * m_hat / (math::sqrt(v_hat) + epsilon);
                }
            }
        }
    }
}

/// Configuration for a plain (non-bilevel) training run.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub arch: Arch,
    pub epochs: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), BilevelError> {
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(BilevelError::InvalidStepSize(self.step_size));
        }
        if self.batch_size == 0 {
            return Err(BilevelError::ZeroBatchSize);
        }
        Ok(())
    }
}

/// Configuration for [`run_bilevel`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BilevelConfig {
    /// Number of outer iterations `T`.
    pub outer_iterations: usize,
    /// Outer step size on the weights.
    pub outer_step: f64,
    /// Optimizer for the weight updates; `Sgd` is plain projected gradient
    /// descent.
    pub weight_optimizer: Optimizer,
    /// Epochs of inner training per outer iteration.
    pub inner_epochs_per_outer: usize,
    /// Inner step size on the classifier parameters.
    pub inner_step: f64,
    pub inner_batch_size: usize,
    pub inner_optimizer: Optimizer,
    /// The noise-robust outer objective, measured on the validation split.
    pub outer_loss: RobustLoss,
    /// Keep the classifier parameters across outer iterations (`true`) or
    /// restart each inner run from the same seeded initialization.
    pub warm_start_inner: bool,
    pub arch: Arch,
    pub seed: u64,
}

impl BilevelConfig {
    /// Defaults: 50 outer iterations, outer step 0.1, one inner epoch per
    /// outer iteration, inner SGD with step 0.1 and batch 32, warm starts.
    pub fn defaults(arch: Arch, outer_loss: RobustLoss, seed: u64) -> Self {
        BilevelConfig {
            outer_iterations: 50,
            outer_step: 0.1,
            weight_optimizer: Optimizer::Sgd,
            inner_epochs_per_outer: 1,
            inner_step: 0.1,
            inner_batch_size: 32,
            inner_optimizer: Optimizer::Sgd,
            outer_loss,
            warm_start_inner: true,
            arch,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), BilevelError> {
        if self.outer_iterations == 0 {
            return Err(BilevelError::ZeroOuterIterations);
        }
        self.validate_allowing_zero_iterations()
    }

    /// Validation without the `outer_iterations >= 1` requirement, for
    /// operations where zero iterations meaningfully mean "do nothing".
    fn validate_allowing_zero_iterations(&self) -> Result<(), BilevelError> {
        if self.inner_epochs_per_outer == 0 {
            return Err(BilevelError::ZeroInnerEpochs);
        }
        if self.inner_batch_size == 0 {
            return Err(BilevelError::ZeroBatchSize);
        }
        for step in [self.outer_step, self.inner_step] {
            if !step.is_finite() || step <= 0.0 {
                return Err(BilevelError::InvalidStepSize(step));
            }
        }
        Ok(())
    }
}

/// What one inner training run produced.
#[derive(Debug, Clone)]
pub struct InnerRun {
    /// Parameters after the last inner update.
    pub params_final: ClassifierParams,
    /// Parameters just before the last inner update; the truncated
    /// hypergradient differentiates through exactly that step.
    pub params_prev: ClassifierParams,
    /// Size of the minibatch that produced the last update.
    pub final_batch_size: usize,
}

#[derive(Debug)]
pub(crate) struct TrainOutcome {
    pub params_final: ClassifierParams,
    pub params_prev: ClassifierParams,
    pub final_batch_size: usize,
}

/// The shared minibatch training loop.
///
/// Shuffles the dataset each epoch with a seeded RNG, averages
/// `w_i * grad(loss_i)` over each batch (normalizing by the batch length,
/// not the weight sum), applies the optimizer, and calls `after_epoch` at
/// the end of every epoch. Errors out as soon as a batch loss stops being
/// finite.
pub(crate) fn train_loop(
    data: &Dataset,
    kind: &LossKind,
    weights: Option<&[f64]>,
    init: &ClassifierParams,
    epochs: usize,
    step_size: f64,
    batch_size: usize,
    optimizer: Optimizer,
    seed: u64,
    mut after_epoch: impl FnMut(usize, &ClassifierParams),
) -> Result<TrainOutcome, BilevelError> {
    model::check_compatible(init, data)?;
    if let Some(w) = weights {
        if w.len() != data.len() {
            return Err(BilevelError::WeightCountMismatch {
                weights: w.len(),
                examples: data.len(),
            });
        }
    }

    let n = data.len();
    let k = init.num_classes();
    let mut params = init.clone();
    let mut prev = init.clone();
    let mut final_batch = 0usize;
    let mut opt = OptimizerState::new(optimizer, params.values().len());
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..epochs {
        let mut rng = rng_from(derive_seed(seed, "order", epoch as u64));
        order.shuffle(&mut rng);
        for (batch_index, batch) in order.chunks(batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut loss_sum = 0.0;
            let grad = par::sum_vector(batch.len(), params.values().len(), |bi, acc| {
                let i = batch[bi];
                let x = data.vector(i);
                let fwd = model::forward(&params, x);
                let mut delta = vec![0.0; k];
                kind.logit_gradient(&fwd.probs, data.example(i).label, &mut delta);
                let w = weights.map_or(1.0, |w| w[i]);
                model::backprop_logit_delta(&params, x, &fwd, &delta, w * scale, acc);
            });
            // A separate cheap pass for the batch loss keeps the gradient
            // accumulation allocation-free of side state.
            loss_sum += par::sum_scalar(batch.len(), |bi| {
                let i = batch[bi];
                let fwd = model::forward(&params, data.vector(i));
                let pred = model::Prediction { logits: fwd.logits, probabilities: fwd.probs };
                let w = weights.map_or(1.0, |w| w[i]);
                w * kind.example_loss(&pred, data.example(i).label)
            });
            if !loss_sum.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(BilevelError::NonFiniteLoss { epoch, batch: batch_index });
            }
            prev.values_mut().copy_from_slice(params.values());
            opt.apply(params.values_mut(), &grad, step_size);
            final_batch = batch.len();
        }
        after_epoch(epoch, &params);
    }

    Ok(TrainOutcome { params_final: params, params_prev: prev, final_batch_size: final_batch })
}

/// Trains a classifier on a dataset with the given loss and optional
/// per-sample weights, starting from the seeded initialization.
pub fn train_classifier(
    data: &Dataset,
    kind: &LossKind,
    weights: Option<&[f64]>,
    config: &TrainConfig,
) -> Result<ClassifierParams, BilevelError> {
    config.validate()?;
    let dim = data.feature_dim().ok_or(ModelError::TextFeatures)?;
    let init = ClassifierParams::init(config.arch, data.num_classes(), dim, config.seed)?;
    let out = train_loop(
        data,
        kind,
        weights,
        &init,
        config.epochs,
        config.step_size,
        config.batch_size,
        config.optimizer,
        config.seed,
        |_, _| {},
    )?;
    Ok(out.params_final)
}

/// Runs the inner problem: weighted cross-entropy training of the
/// classifier for `inner_epochs_per_outer` epochs.
///
/// The epoch shuffling seed is derived from `config.seed` and
/// `weights.iteration()`, so each outer iteration sees fresh batch orders
/// while the whole procedure stays reproducible.
pub fn inner_train(
    weights: &SampleWeights,
    train: &Dataset,
    init: &ClassifierParams,
    config: &BilevelConfig,
) -> Result<InnerRun, BilevelError> {
    config.validate_allowing_zero_iterations()?;
    if weights.len() != train.len() {
        return Err(BilevelError::WeightCountMismatch {
            weights: weights.len(),
            examples: train.len(),
        });
    }
    let seed = derive_seed(config.seed, "inner", weights.iteration() as u64);
    let out = train_loop(
        train,
        &LossKind::CrossEntropy,
        Some(weights.values()),
        init,
        config.inner_epochs_per_outer,
        config.inner_step,
        config.inner_batch_size,
        config.inner_optimizer,
        seed,
        |_, _| {},
    )?;
    Ok(InnerRun {
        params_final: out.params_final,
        params_prev: out.params_prev,
        final_batch_size: out.final_batch_size,
    })
}

/// One-step truncated hypergradient of the outer loss with respect to the
/// sample weights.
///
/// Differentiating only through the final inner update
/// `theta_T = theta_prev - (step / B) * sum_{i in B} w_i grad(ce_i)` gives
///
/// `d L_outer / d w_i = -(step / B) < grad_theta L_outer(theta_T),
///                                    grad_theta ce_i(theta_prev) >`
///
/// evaluated here for every training sample, not only the final batch, so
/// each weight receives a signal every iteration. For adam inner runs the
/// scalar `step` stands in for the preconditioned step; the difference is a
/// positive rescaling that the outer step size absorbs.
pub fn meta_gradient(
    run: &InnerRun,
    validation: &Dataset,
    train: &Dataset,
    config: &BilevelConfig,
) -> Result<Vec<f64>, BilevelError> {
    let outer_kind = config.outer_loss.kind();
    let val_grad =
        losses::dataset_loss_gradient(&run.params_final, validation, &outer_kind, None)?;
    model::check_compatible(&run.params_prev, train)?;
    debug_assert!(run.final_batch_size > 0, "inner run must have applied at least one update");
    let scale = -(config.inner_step / run.final_batch_size.max(1) as f64);
    let k = run.params_prev.num_classes();
    let grad = par::map_indexed(train.len(), |i| {
        let x = train.vector(i);
        let fwd = model::forward(&run.params_prev, x);
        let mut delta = vec![0.0; k];
        LossKind::CrossEntropy.logit_gradient(&fwd.probs, train.example(i).label, &mut delta);
        scale * model::dot_backprop_logit_delta(&run.params_prev, x, &fwd, &delta, &val_grad)
    });
    Ok(grad)
}

/// One outer update: `w <- clamp(w - step * gradient, 0, 1)`.
pub fn outer_step(
    weights: &SampleWeights,
    gradient: &[f64],
    step: f64,
) -> Result<SampleWeights, BilevelError> {
    if !step.is_finite() || step <= 0.0 {
        return Err(BilevelError::InvalidStepSize(step));
    }
    if gradient.len() != weights.len() {
        return Err(BilevelError::GradientCountMismatch {
            expected: weights.len(),
            found: gradient.len(),
        });
    }
    let values = weights
        .values
        .iter()
        .zip(gradient)
        .map(|(w, g)| (w - step * g).clamp(0.0, 1.0))
        .collect();
    Ok(SampleWeights { values, iteration: weights.iteration + 1 })
}

/// One record per outer iteration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceRecord {
    /// Outer iteration number, starting at 1.
    pub iteration: usize,
    /// Robust loss on the validation split at the inner optimum, i.e. the
    /// value the weight update descends on.
    pub outer_loss: f64,
    /// Weighted cross-entropy on the train split at the inner optimum,
    /// using the weights that drove this inner run.
    pub inner_final_loss: f64,
    /// Statistics of the weights after the update.
    pub weight_mean: f64,
    pub weight_min: f64,
    pub weight_max: f64,
    /// 20-bin histogram of the weights after the update.
    pub weight_histogram: Vec<u64>,
}

pub type BilevelTrace = Vec<TraceRecord>;

/// Runs the full bilevel procedure and returns the learned weights with a
/// per-iteration trace. See [`run_bilevel_observed`] for a streaming view.
pub fn run_bilevel(
    train: &Dataset,
    validation: &Dataset,
    config: &BilevelConfig,
) -> Result<(SampleWeights, BilevelTrace), BilevelError> {
    run_bilevel_observed(train, validation, config, |_, _| {})
}

/// [`run_bilevel`] with a callback invoked after every outer iteration,
/// receiving the trace record and the weights at that point.
///
/// The procedure reads only features and labels; clean flags never
/// influence it.
pub fn run_bilevel_observed(
    train: &Dataset,
    validation: &Dataset,
    config: &BilevelConfig,
    mut observer: impl FnMut(&TraceRecord, &SampleWeights),
) -> Result<(SampleWeights, BilevelTrace), BilevelError> {
    config.validate()?;
    let dim = train.feature_dim().ok_or(ModelError::TextFeatures)?;
    let init = ClassifierParams::init(
        config.arch,
        train.num_classes(),
        dim,
        derive_seed(config.seed, "theta0", 0),
    )?;
    model::check_compatible(&init, validation)?;

    let mut weights = SampleWeights::initial(train.len());
    let mut weight_opt = OptimizerState::new(config.weight_optimizer, train.len());
    let mut params = init.clone();
    let mut trace = Vec::with_capacity(config.outer_iterations);
    let outer_kind = config.outer_loss.kind();

    for t in 1..=config.outer_iterations {
        let run = inner_train(&weights, train, &params, config)?;
        let outer_loss =
            losses::dataset_loss(&run.params_final, validation, &outer_kind, None)?;
        if !outer_loss.is_finite() {
            return Err(BilevelError::NonFiniteOuterLoss { iteration: t });
        }
        let inner_final_loss = losses::dataset_loss(
            &run.params_final,
            train,
            &LossKind::CrossEntropy,
            Some(weights.values()),
        )?;
        let gradient = meta_gradient(&run, validation, train, config)?;

        weights = match config.weight_optimizer {
            Optimizer::Sgd => outer_step(&weights, &gradient, config.outer_step)?,
            Optimizer::Adam { .. } => {
                let mut values = weights.values.clone();
                weight_opt.apply(&mut values, &gradient, config.outer_step);
                for v in &mut values {
                    *v = v.clamp(0.0, 1.0);
                }
                SampleWeights { values, iteration: weights.iteration + 1 }
            }
        };

        let record = TraceRecord {
            iteration: t,
            outer_loss,
            inner_final_loss,
            weight_mean: weights.values.iter().sum::<f64>() / weights.len() as f64,
            weight_min: weights.values.iter().copied().fold(f64::INFINITY, f64::min),
            weight_max: weights.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            weight_histogram: eval::weight_histogram(&weights.values, 20)
                .expect("weights stay within [0, 1]"),
        };
        observer(&record, &weights);
        trace.push(record);

        params = if config.warm_start_inner { run.params_final } else { init.clone() };
    }

    Ok((weights, trace))
}

/// Trains the classifier directly on the robust loss with no sample
/// weights, for the same total number of epochs the bilevel run would use
/// (`outer_iterations * inner_epochs_per_outer`). Zero iterations return
/// the initialization untouched.
pub fn one_level_baseline(
    train: &Dataset,
    config: &BilevelConfig,
) -> Result<ClassifierParams, BilevelError> {
    config.validate_allowing_zero_iterations()?;
    let dim = train.feature_dim().ok_or(ModelError::TextFeatures)?;
    let init = ClassifierParams::init(
        config.arch,
        train.num_classes(),
        dim,
        derive_seed(config.seed, "theta0", 0),
    )?;
    let kind = config.outer_loss.kind();
    let epochs = config.outer_iterations * config.inner_epochs_per_outer;
    let out = train_loop(
        train,
        &kind,
        None,
        &init,
        epochs,
        config.inner_step,
        config.inner_batch_size,
        config.inner_optimizer,
        derive_seed(config.seed, "one-level", 0),
        |_, _| {},
    )?;
    Ok(out.params_final)
}
