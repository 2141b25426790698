// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::SearchSpace;
use crate::error::{Error, Result};
use crate::eval::evaluate_dataset;
use crate::nn::ModelSpec;
use crate::preprocess::{stratified_split, CleanSeries};
use crate::train::{fit_series, TrainConfig};

/// Fraction of the training series kept for fitting; the rest validates.
pub const VALIDATION_TRAIN_FRACTION: f64 = 0.8;

/// Concrete training settings decoded from a search point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpoParams {
    pub gru_units: usize,
    pub gru_layers: usize,
    pub window_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub output_threshold: f64,
}

impl Default for HpoParams {
    fn default() -> Self {
        HpoParams {
            gru_units: 100,
            gru_layers: 2,
            window_size: 100,
            batch_size: 16,
            learning_rate: 1.0,
            lr_decay: 1.0,
            output_threshold: 0.7,
        }
    }
}

impl HpoParams {
    /// Dimensions absent from `space` keep the values of `base`.
    pub fn from_point(space: &SearchSpace, x: &[f64], base: &HpoParams) -> Result<Self> {
        if x.len() != space.len() {
            return Err(Error::DimensionMismatch {
                expected: space.len(),
                actual: x.len(),
            });
        }
        let mut p = base.clone();
        for (d, &v) in space.dims.iter().zip(x) {
            match d.name.as_str() {
                "gru_units" => p.gru_units = v.round() as usize,
                "gru_layers" => p.gru_layers = v.round() as usize,
                "window_size" => p.window_size = v.round() as usize,
                "batch_size" => p.batch_size = v.round() as usize,
                "learning_rate" => p.learning_rate = v,
                "lr_decay" => p.lr_decay = v,
                "output_threshold" => p.output_threshold = v,
                other => return Err(Error::ConfigInvalid(format!("unknown dimension {other}"))),
            }
        }
        Ok(p)
    }

    pub fn model_spec(&self, bidirectional: bool) -> ModelSpec {
        ModelSpec::new(vec![self.gru_units; self.gru_layers], bidirectional, self.window_size)
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.window_size = self.window_size;
        cfg.batch_size = self.batch_size;
        cfg.optimizer.lr_multiplier = self.learning_rate;
        cfg.optimizer.lr_decay = self.lr_decay;
        cfg.positive_horizon = cfg.positive_horizon.max(self.window_size);
        cfg
    }
}

/// Classification error (1 - series accuracy) on a seeded 80/20 carve-out
/// of `train`. The test split never enters.
pub fn validation_error(
    train: &[CleanSeries],
    params: &HpoParams,
    base: &TrainConfig,
    bidirectional: bool,
) -> Result<f64> {
    let (fit_set, val_set) =
        stratified_split(train.to_vec(), VALIDATION_TRAIN_FRACTION, base.seed)?;
    let cfg = params.train_config(base);
    let outcome = fit_series(&fit_set, &params.model_spec(bidirectional), &cfg, |_, _| {})?;
    let report = evaluate_dataset(&outcome.model, &val_set, params.output_threshold, 1)?;
    report.accuracy.map(|a| 1.0 - a).ok_or(Error::EmptyEvaluation)
}
