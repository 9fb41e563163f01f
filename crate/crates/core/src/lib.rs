//! Thinning of dense weather-station networks.
//!
//! The crate covers quality control of raw station series, masked-target
//! training of a single imputation model that predicts every station from the
//! others, greedy backward elimination of stations, and evaluation of the
//! thinned networks against statistical baselines. A synthetic network
//! generator provides ground truth for end-to-end checks.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod gbt;
pub mod model;
pub mod pipeline;
pub mod qc;
pub mod seed;
pub mod series;
pub mod synth;
pub mod thinning;
pub mod tuning;

pub use error::{Error, Result};
