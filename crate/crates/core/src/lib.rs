//! Learning per-sample quality weights for noisily-labeled classification data.
//!
//! The central routine is [`bilevel::run_bilevel`]: it alternates short inner
//! training runs of a small differentiable classifier (weighted cross-entropy
//! over the training split) with outer gradient steps on the per-sample
//! weights, where the outer objective is a noise-robust loss (reversed
//! cross-entropy or mean absolute error) measured on a held-out validation
//! split. Because the robust losses satisfy a symmetry property, the outer
//! objective tolerates label noise in the validation split itself, so the
//! whole procedure runs without any clean data.
//!
//! Around that core the crate provides the supporting pieces needed to build
//! and evaluate a data-curation pipeline:
//!
//! - [`data`]: in-memory datasets, seeded splits, and a Gaussian-blob
//!   generator for controlled experiments.
//! - [`model`]: feature hashing for text, a linear / one-hidden-layer
//!   classifier with hand-derived gradients.
//! - [`losses`]: cross-entropy and the robust losses, with their symmetry
//!   constants and dataset-level reductions.
//! - [`noise`]: label corruption under uniform, class-dependent, and
//!   instance-dependent noise models, plus an oracle that measures how well
//!   the noise-tolerance identity holds for a given loss.
//! - [`sampling`]: budgeted subset selection from learned weights.
//! - [`baselines`]: confidence and small-loss filtering for comparison.
//! - [`eval`]: separation AUROC, loss-surface probes, cross-loss training
//!   curves, and Self-BLEU for text corpora.
//!
//! The crate is `no_std`-compatible (with `alloc`); the `std` feature (on by
//! default) switches float math to the standard library and enables the
//! optional `parallel` feature, which parallelizes the heavier passes with
//! rayon without changing any result bit-for-bit.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod baselines;
pub mod bilevel;
pub mod data;
pub mod eval;
pub mod losses;
pub mod model;
pub mod noise;
pub mod sampling;

mod math;
mod par;
mod seed;

pub use seed::derive_seed;
