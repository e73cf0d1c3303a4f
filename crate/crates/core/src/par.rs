//! Deterministic parallel helpers.
//!
//! With the `parallel` feature the heavy per-sample passes fan out over
//! rayon; without it the same code paths run sequentially. Floating-point
//! reductions always accumulate inside fixed-size chunks and then combine
//! the chunk partials in index order, so the summation tree — and therefore
//! every result — is identical for any thread count, including one.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk size for deterministic reductions.
const CHUNK: usize = 1024;

/// Maps `f` over `0..n`, preserving index order in the output.
pub(crate) fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sums `f(i)` over `0..n` with a fixed, thread-count-independent tree.
pub(crate) fn sum_scalar<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunk_sum = |start: usize| -> f64 {
        let end = usize::min(start + CHUNK, n);
        (start..end).map(&f).sum()
    };
    let starts: Vec<usize> = (0..n).step_by(CHUNK.max(1)).collect();
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = starts.par_iter().map(|&s| chunk_sum(s)).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = starts.iter().map(|&s| chunk_sum(s)).collect();
    partials.iter().sum()
}

/// Accumulates per-index vector contributions into a single vector of
/// length `len`, again with a fixed reduction order. `f` adds the
/// contribution of index `i` into the buffer it is handed.
pub(crate) fn sum_vector<F>(n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let chunk_acc = |start: usize| -> Vec<f64> {
        let end = usize::min(start + CHUNK, n);
        let mut acc = vec![0.0; len];
        for i in start..end {
            f(i, &mut acc);
        }
        acc
    };
    let starts: Vec<usize> = (0..n).step_by(CHUNK.max(1)).collect();
    #[cfg(feature = "parallel")]
    let partials: Vec<Vec<f64>> = starts.par_iter().map(|&s| chunk_acc(s)).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Vec<f64>> = starts.iter().map(|&s| chunk_acc(s)).collect();

    let mut total = vec![0.0; len];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}
