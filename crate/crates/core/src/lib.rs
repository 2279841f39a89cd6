//! Calibration fine-tuning at desk scale.
//!
//! Target laws are discretized into canonical numeric output spaces, turned
//! into prefix tries with next-token soft targets, and used to train a small
//! autoregressive model with either trie KL (soft) or sampled-completion
//! cross-entropy (hard). The evaluator measures logit KL, order-statistic W1,
//! valid rate and the stochastic-behavior metrics.

pub mod dist;
pub mod error;
pub mod exec;
pub mod rng;
pub mod special;
pub mod discretize;
pub mod trie;
pub mod vocab;
pub mod model;
pub mod train;
pub mod eval;
pub mod bench;
