// SPDX-License-Identifier: MIT OR Apache-2.0

//! Iterative median-filter outlier rejection.
//!
//! Each pass studentizes the current signal, compares it with its running
//! median and marks samples whose absolute deviation exceeds the pass
//! threshold. Marked samples are dropped from the signal in its original
//! units and re-filled by interpolation. The threshold shrinks geometrically
//! between passes; iteration stops at the first pass that marks nothing.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::gaps::fill_channel;
use super::signal::{median_filter, studentize};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierConfig {
    pub median_window: usize,
    /// First-pass threshold in studentized units.
    pub initial_threshold: f64,
    pub decay: f64,
    pub max_iterations: usize,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        OutlierConfig {
            median_window: 31,
            initial_threshold: 3.0,
            decay: 0.8,
            max_iterations: 5,
        }
    }
}

impl OutlierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.median_window < 3 || self.median_window.is_multiple_of(2) {
            return Err(Error::ConfigInvalid(format!(
                "median window must be odd and >= 3, got {}",
                self.median_window
            )));
        }
        if !(self.initial_threshold > 0.0 && self.initial_threshold.is_finite()) {
            return Err(Error::ConfigInvalid("outlier threshold must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::ConfigInvalid("outlier decay must lie in (0, 1]".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::ConfigInvalid("outlier iterations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn threshold_at(&self, iteration: usize) -> f64 {
        self.initial_threshold * self.decay.powi(iteration as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierOutcome {
    pub cleaned: Vec<f64>,
    pub iterations: usize,
    /// Every index replaced in any pass.
    pub removed: BTreeSet<usize>,
    /// Threshold used on each pass that ran.
    pub thresholds: Vec<f64>,
    /// The final pass marked nothing.
    pub converged: bool,
}

pub fn remove_outliers_iterative(x: &[f64], cfg: &OutlierConfig) -> Result<OutlierOutcome> {
    cfg.validate()?;
    if x.len() < cfg.median_window {
        return Err(Error::BadWindow {
            window: cfg.median_window,
            len: x.len(),
        });
    }
    let mut current = x.to_vec();
    let mut removed = BTreeSet::new();
    let mut thresholds = Vec::new();
    let mut converged = false;
    for iteration in 0..cfg.max_iterations {
        let threshold = cfg.threshold_at(iteration);
        thresholds.push(threshold);
        let z = studentize(&current)?;
        let med = median_filter(&z, cfg.median_window)?;
        let marked: Vec<usize> = (0..z.len())
            .filter(|&i| (z[i] - med[i]).abs() > threshold)
            .collect();
        if marked.is_empty() {
            converged = true;
            break;
        }
        let mut holed: Vec<Option<f64>> = current.iter().copied().map(Some).collect();
        for &i in &marked {
            holed[i] = None;
        }
        current = fill_channel(&holed, "signal")?;
        removed.extend(marked);
    }
    Ok(OutlierOutcome {
        cleaned: current,
        iterations: thresholds.len(),
        removed,
        thresholds,
        converged,
    })
}
