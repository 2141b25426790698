// SPDX-License-Identifier: MIT OR Apache-2.0

//! Early-warning pipeline for syncope (fainting) prediction from mean blood
//! pressure and heart-rate recordings.
//!
//! The crate covers the whole chain: CSV ingestion ([`data`]), signal cleaning
//! ([`preprocess`]), a from-scratch GRU / bidirectional GRU classifier with
//! ADADELTA training ([`nn`], [`train`]), series-level detection and
//! threshold analysis ([`eval`]), Gaussian-process Bayesian hyperparameter
//! search ([`hpo`]) and a seeded synthetic recording generator ([`synth`]).

#![deny(unsafe_code)]
// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod hpo;
pub mod nn;
pub mod preprocess;
pub mod synth;
pub mod train;

pub use data::{Channel, DatasetCatalog, Label, RawRecording};
pub use error::{Error, ErrorClass, Result};
pub use eval::{ConfusionCounts, EvalReport};
pub use nn::{GruModel, ModelSpec};
pub use preprocess::{CleanSeries, OutlierConfig, SplitDataset};
pub use train::TrainConfig;

/// Nominal sampling rate of the recordings, in hertz.
pub const DEFAULT_RATE_HZ: f64 = 1.25;
