// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stacked (bi)directional GRU classifier with a dense softmax head,
//! trained by backpropagation through time and ADADELTA.
//!
//! Gate convention, per direction and time step:
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! h~ = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ h~
//! ```
//!
//! The three gate blocks are stored stacked in `[z; r; h~]` row order.

mod adadelta;
mod gru;
mod loss;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adadelta::{AdadeltaConfig, AdadeltaState};
pub use gru::{
    backward, forward_batch, forward_sequence, gru_cell_forward, loss_and_gradients,
    predict_batch, stack_windows, ForwardCache,
};
pub use loss::{cross_entropy_loss, softmax2};

pub const NUM_CLASSES: usize = 2;

/// Gate block within the stacked parameter matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Update,
    Reset,
    Candidate,
}

impl Gate {
    fn block(self) -> usize {
        match self {
            Gate::Update => 0,
            Gate::Reset => 1,
            Gate::Candidate => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub num_layers: usize,
    pub units_per_layer: Vec<usize>,
    pub bidirectional: bool,
    pub input_channels: usize,
    pub window_size: usize,
}

impl ModelSpec {
    pub fn new(units_per_layer: Vec<usize>, bidirectional: bool, window_size: usize) -> Self {
        ModelSpec {
            num_layers: units_per_layer.len(),
            units_per_layer,
            bidirectional,
            input_channels: 2,
            window_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.units_per_layer.len() != self.num_layers {
            return Err(Error::ConfigInvalid(format!(
                "{} layers declared but {} unit counts given",
                self.num_layers,
                self.units_per_layer.len()
            )));
        }
        if self.units_per_layer.contains(&0) || self.input_channels == 0 || self.window_size == 0
        {
            return Err(Error::ConfigInvalid("layer sizes and window must be positive".into()));
        }
        Ok(())
    }

    fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Width of layer `k`'s per-step output.
    pub fn output_dim(&self, layer: usize) -> usize {
        self.units_per_layer[layer] * self.directions()
    }

    pub fn input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_channels
        } else {
            self.output_dim(layer - 1)
        }
    }

    /// Width of the feature vector fed to the head.
    pub fn feature_dim(&self) -> usize {
        self.output_dim(self.num_layers - 1)
    }
}

/// Parameters of one recurrent direction. `w` is `3U × input`, `u` is
/// `3U × U` and `b` has `3U` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruDirection {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl GruDirection {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        GruDirection {
            w: Array2::zeros((3 * units, input_dim)),
            u: Array2::zeros((3 * units, units)),
            b: Array1::zeros(3 * units),
        }
    }

    pub fn units(&self) -> usize {
        self.u.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn input_weights(&self, gate: Gate) -> ArrayView2<'_, f64> {
        let u = self.units();
        self.w.slice(s![gate.block() * u..(gate.block() + 1) * u, ..])
    }

    pub fn recurrent_weights(&self, gate: Gate) -> ArrayView2<'_, f64> {
        let u = self.units();
        self.u.slice(s![gate.block() * u..(gate.block() + 1) * u, ..])
    }

    pub fn bias(&self, gate: Gate) -> ndarray::ArrayView1<'_, f64> {
        let u = self.units();
        self.b.slice(s![gate.block() * u..(gate.block() + 1) * u])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruLayerParams {
    pub forward: GruDirection,
    pub backward: Option<GruDirection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseSoftmaxHead {
    /// `2 × feature_dim`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<GruLayerParams>,
    pub head: DenseSoftmaxHead,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let layers = (0..spec.num_layers)
            .map(|k| {
                let (inp, units) = (spec.input_dim(k), spec.units_per_layer[k]);
                GruLayerParams {
                    forward: GruDirection::zeros(inp, units),
                    backward: spec.bidirectional.then(|| GruDirection::zeros(inp, units)),
                }
            })
            .collect();
        ModelParams {
            layers,
            head: DenseSoftmaxHead {
                w: Array2::zeros((NUM_CLASSES, spec.feature_dim())),
                b: Array1::zeros(NUM_CLASSES),
            },
        }
    }

    /// Every tensor as a flat row-major slice, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for dir in std::iter::once(&layer.forward).chain(&layer.backward) {
                out.push(dir.w.as_slice().expect("standard layout"));
                out.push(dir.u.as_slice().expect("standard layout"));
                out.push(dir.b.as_slice().expect("standard layout"));
            }
        }
        out.push(self.head.w.as_slice().expect("standard layout"));
        out.push(self.head.b.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for dir in std::iter::once(&mut layer.forward).chain(layer.backward.as_mut()) {
                out.push(dir.w.as_slice_mut().expect("standard layout"));
                out.push(dir.u.as_slice_mut().expect("standard layout"));
                out.push(dir.b.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.head.w.as_slice_mut().expect("standard layout"));
        out.push(self.head.b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruModel {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub optimizer: AdadeltaState,
    pub seed: u64,
}

fn fill_uniform(dst: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    for v in dst {
        *v = dist.sample(rng);
    }
}

/// Fan-scaled uniform weights, zero biases, fresh optimizer state.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<GruModel> {
    init_params_with(spec, seed, AdadeltaConfig::default())
}

pub fn init_params_with(spec: &ModelSpec, seed: u64, opt: AdadeltaConfig) -> Result<GruModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(spec);
    for layer in &mut params.layers {
        for dir in std::iter::once(&mut layer.forward).chain(layer.backward.as_mut()) {
            let (units, inp) = (dir.units(), dir.input_dim());
            let w = dir.w.as_slice_mut().expect("standard layout");
            for block in w.chunks_mut(units * inp) {
                fill_uniform(block, inp, units, &mut rng);
            }
            let u = dir.u.as_slice_mut().expect("standard layout");
            for block in u.chunks_mut(units * units) {
                fill_uniform(block, units, units, &mut rng);
            }
        }
    }
    let feat = spec.feature_dim();
    fill_uniform(
        params.head.w.as_slice_mut().expect("standard layout"),
        feat,
        NUM_CLASSES,
        &mut rng,
    );
    let optimizer = AdadeltaState::new(&params, opt);
    Ok(GruModel {
        spec: spec.clone(),
        params,
        optimizer,
        seed,
    })
}
