// SPDX-License-Identifier: MIT OR Apache-2.0

//! ADADELTA with an explicit step multiplier and per-epoch multiplier decay.

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
    pub lr_multiplier: f64,
    pub lr_decay: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            rho: 0.95,
            epsilon: 1e-6,
            lr_multiplier: 1.0,
            lr_decay: 1.0,
        }
    }
}

impl AdadeltaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::ConfigInvalid(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::ConfigInvalid("epsilon must be positive".into()));
        }
        if !(self.lr_multiplier >= 0.0 && self.lr_decay > 0.0) {
            return Err(Error::ConfigInvalid("learning rate settings must be non-negative".into()));
        }
        Ok(())
    }
}

/// Running averages per parameter tensor, in [`ModelParams::tensors`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaState {
    pub config: AdadeltaConfig,
    pub mean_sq_grad: Vec<Vec<f64>>,
    pub mean_sq_update: Vec<Vec<f64>>,
    pub steps: u64,
}

impl AdadeltaState {
    pub fn new(params: &ModelParams, config: AdadeltaConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdadeltaState {
            config,
            mean_sq_grad: zeros.clone(),
            mean_sq_update: zeros,
            steps: 0,
        }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        let AdadeltaConfig {
            rho,
            epsilon,
            lr_multiplier,
            ..
        } = self.config;
        let grads = grads.tensors();
        let params = params.tensors_mut();
        if grads.len() != params.len() || params.len() != self.mean_sq_grad.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean_sq_grad.len(),
                actual: grads.len(),
            });
        }
        for (((p, g), eg2), edx2) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.mean_sq_grad)
            .zip(&mut self.mean_sq_update)
        {
            if p.len() != g.len() || p.len() != eg2.len() {
                return Err(Error::DimensionMismatch {
                    expected: p.len(),
                    actual: g.len(),
                });
            }
            for i in 0..p.len() {
                let gi = g[i];
                eg2[i] = rho * eg2[i] + (1.0 - rho) * gi * gi;
                let delta = -((edx2[i] + epsilon).sqrt() / (eg2[i] + epsilon).sqrt()) * gi
                    * lr_multiplier;
                edx2[i] = rho * edx2[i] + (1.0 - rho) * delta * delta;
                p[i] += delta;
            }
        }
        self.steps += 1;
        Ok(())
    }

    pub fn end_epoch(&mut self) {
        self.config.lr_multiplier *= self.config.lr_decay;
    }
}
