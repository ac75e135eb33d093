//! Valence prediction from inter-beat-interval time series.
//!
//! The crate is organised as a pipeline:
//!
//! - [`signal`]: ECG R-peak detection, IBI extraction, z-scoring and padding.
//! - [`nn`]: a dual-stream network (stacked 1-D convolutions and a
//!   bidirectional LSTM) with hand-derived gradients and an Adam training loop.
//! - [`bayes`]: Monte-Carlo dropout posteriors and the confidence-threshold
//!   classify-or-abstain rule.
//! - [`eval`]: leave-k-subjects-out folds, coverage/accuracy/F1 sweeps and the
//!   Mann-Whitney U test.
//! - [`data`]: corpus ingestion and synthetic generators.
//! - [`cli`]: the `valence` command-line front end.

pub mod bayes;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod nn;
pub mod seed;
pub mod signal;
