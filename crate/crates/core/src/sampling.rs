//! Budgeted subset selection from learned sample weights.
//!
//! Weights are first rescaled so they sum to the budget `D` while staying
//! within `[0, 1]` (rescale, cap anything that exceeds 1, redistribute the
//! excess over the rest, repeat); treating the result as per-example
//! inclusion probabilities makes the expected subset size exactly `D`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::bilevel::SampleWeights;
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplingError {
    #[error("budget must lie in 1..={examples}, got {budget}")]
    BudgetOutOfRange { budget: usize, examples: usize },
    #[error("all sample weights are zero; nothing can be selected")]
    AllZeroWeights,
}

/// Weights rescaled to inclusion probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWeights {
    /// Per-example inclusion probabilities in `[0, 1]`.
    pub values: Vec<f64>,
    /// Their sum; equals the budget when `exact` is true.
    pub total: f64,
    /// False when the budget exceeds the number of strictly positive
    /// weights, in which case hitting the budget in expectation is
    /// impossible and every positive weight is simply capped at 1. Callers
    /// should surface this as a warning.
    pub exact: bool,
}

/// Rescales weights to inclusion probabilities summing to `budget`.
pub fn normalize_weights(
    weights: &SampleWeights,
    budget: usize,
) -> Result<NormalizedWeights, SamplingError> {
    let n = weights.len();
    if budget == 0 || budget > n {
        return Err(SamplingError::BudgetOutOfRange { budget, examples: n });
    }
    let w = weights.values();
    if w.iter().all(|&v| v == 0.0) {
        return Err(SamplingError::AllZeroWeights);
    }

    let mut values = vec![0.0; n];
    let mut capped = vec![false; n];
    let mut remaining_budget = budget as f64;
    let mut uncapped_sum: f64 = w.iter().sum();

    // Each pass caps at least one more weight or settles, so this
    // terminates after at most `n` passes.
    loop {
        if uncapped_sum <= 0.0 {
            break;
        }
        let scale = remaining_budget / uncapped_sum;
        let mut newly_capped = false;
        for i in 0..n {
            if capped[i] || w[i] == 0.0 {
                continue;
            }
            // Within rounding error of the cap counts as capped, so that a
            // uniform full-budget rescale lands on exactly 1.
            if w[i] * scale >= 1.0 - 1e-12 {
                values[i] = 1.0;
                capped[i] = true;
                remaining_budget -= 1.0;
                uncapped_sum -= w[i];
                newly_capped = true;
            }
        }
        if !newly_capped {
            for i in 0..n {
                if !capped[i] && w[i] > 0.0 {
                    values[i] = w[i] * scale;
                }
            }
            break;
        }
    }

    let total: f64 = values.iter().sum();
    let exact = (total - budget as f64).abs() <= 1e-9;
    Ok(NormalizedWeights { values, total, exact })
}

/// Draws a subset by independent Bernoulli trials on the normalized
/// weights. The returned indices are ascending; the expected subset size is
/// the budget (when normalization was exact).
pub fn sample_subset(
    weights: &SampleWeights,
    budget: usize,
    seed: u64,
) -> Result<Vec<usize>, SamplingError> {
    let normalized = normalize_weights(weights, budget)?;
    let mut rng = rng_from(derive_seed(seed, "subset", 0));
    let mut selected = Vec::new();
    for (i, &p) in normalized.values.iter().enumerate() {
        // random::<f64>() lies in [0, 1), so p = 1 always selects and
        // p = 0 never does.
        if rng.random::<f64>() < p {
            selected.push(i);
        }
    }
    Ok(selected)
}

/// Deterministic alternative to [`sample_subset`]: the `budget` indices
/// with the largest weights, ties broken toward the smaller index. The
/// result is ascending.
pub fn top_k(weights: &SampleWeights, budget: usize) -> Result<Vec<usize>, SamplingError> {
    let n = weights.len();
    if budget == 0 || budget > n {
        return Err(SamplingError::BudgetOutOfRange { budget, examples: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Sort by descending weight; equal weights keep index order because the
    // sort is stable.
    order.sort_by(|&a, &b| {
        weights.values()[b]
            .partial_cmp(&weights.values()[a])
            .expect("weights are finite by construction")
    });
    let mut picked: Vec<usize> = order[..budget].to_vec();
    picked.sort_unstable();
    Ok(picked)
}
