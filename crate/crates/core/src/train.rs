// SPDX-License-Identifier: MIT OR Apache-2.0

//! Window extraction, mini-batch ADADELTA training and checkpoints.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::nn::{init_params_with, loss_and_gradients, AdadeltaConfig, GruModel, ModelParams, ModelSpec};
use crate::preprocess::{CleanSeries, SplitDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub window_size: usize,
    pub stride: usize,
    /// Windows ending within this many samples before the marker are positive.
    pub positive_horizon: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: AdadeltaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window_size: 100,
            stride: 10,
            positive_horizon: 750,
            batch_size: 16,
            epochs: 50,
            seed: 0,
            optimizer: AdadeltaConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.window_size == 0 {
            return bad("window size must be >= 1");
        }
        if self.stride == 0 {
            return bad("stride must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if self.positive_horizon < self.window_size {
            return bad("positive horizon must be at least the window size");
        }
        self.optimizer.validate()
    }
}

/// A window identified by the index of its last sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub end_index: usize,
    pub label: Label,
}

impl Window {
    /// `window_size × 2` matrix of `[mBP, HR]` rows ending at `end_index`.
    pub fn data(&self, series: &CleanSeries, window_size: usize) -> Array2<f64> {
        window_data(series, self.end_index, window_size)
    }
}

pub fn window_data(series: &CleanSeries, end_index: usize, window_size: usize) -> Array2<f64> {
    let start = end_index + 1 - window_size;
    Array2::from_shape_fn((window_size, 2), |(t, c)| {
        if c == 0 {
            series.mbp[start + t]
        } else {
            series.hr[start + t]
        }
    })
}

/// Sliding windows at `cfg.stride`, labelled against the syncope marker.
///
/// Windows of a syncope series ending in `[m - horizon, m]` are positive,
/// earlier ones negative and later ones dropped. Syncope series without a
/// marker yield no windows. Every window of a no-syncope series is negative.
pub fn make_windows(series: &CleanSeries, cfg: &TrainConfig) -> Result<Vec<Window>> {
    let (len, size) = (series.len(), cfg.window_size);
    if len < size {
        return Err(Error::SeriesTooShort {
            id: series.id.clone(),
            len,
            needed: size,
        });
    }
    let ends = (size - 1..len).step_by(cfg.stride.max(1));
    let windows = match (series.label, series.marker_index) {
        (Label::NoSyncope, _) => ends
            .map(|end_index| Window {
                end_index,
                label: Label::NoSyncope,
            })
            .collect(),
        (Label::Syncope, None) => Vec::new(),
        (Label::Syncope, Some(m)) => {
            let onset = m.saturating_sub(cfg.positive_horizon);
            ends.take_while(|&e| e <= m)
                .map(|end_index| Window {
                    end_index,
                    label: if end_index >= onset {
                        Label::Syncope
                    } else {
                        Label::NoSyncope
                    },
                })
                .collect()
        }
    };
    Ok(windows)
}

/// Where a batch row came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub series_id: String,
    pub end_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    /// Time-major `window × batch × 2`.
    pub inputs: Array3<f64>,
    /// One-hot rows; column 1 is syncope.
    pub targets: Array2<f64>,
    pub provenance: Vec<Provenance>,
}

impl WindowBatch {
    pub fn target_classes(&self) -> Vec<usize> {
        self.targets
            .rows()
            .into_iter()
            .map(|r| usize::from(r[1] > r[0]))
            .collect()
    }
}

/// Indexed window across a list of series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowRef {
    pub series: usize,
    pub window: Window,
}

pub fn collect_windows(series: &[CleanSeries], cfg: &TrainConfig) -> Result<Vec<WindowRef>> {
    let mut out = Vec::new();
    for (i, s) in series.iter().enumerate() {
        out.extend(
            make_windows(s, cfg)?
                .into_iter()
                .map(|window| WindowRef { series: i, window }),
        );
    }
    Ok(out)
}

pub fn assemble_batch(series: &[CleanSeries], refs: &[WindowRef], window_size: usize) -> WindowBatch {
    let b = refs.len();
    let mut inputs = Array3::zeros((window_size, b, 2));
    let mut targets = Array2::zeros((b, 2));
    let mut provenance = Vec::with_capacity(b);
    for (row, r) in refs.iter().enumerate() {
        let s = &series[r.series];
        let start = r.window.end_index + 1 - window_size;
        for t in 0..window_size {
            inputs[[t, row, 0]] = s.mbp[start + t];
            inputs[[t, row, 1]] = s.hr[start + t];
        }
        targets[[row, r.window.label.class_index()]] = 1.0;
        provenance.push(Provenance {
            series_id: s.id.clone(),
            end_index: r.window.end_index,
        });
    }
    WindowBatch {
        inputs,
        targets,
        provenance,
    }
}

/// Per-epoch window order: a seeded permutation of all training windows.
pub fn epoch_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: GruModel,
    /// Mean training cross-entropy per epoch.
    pub loss_trace: Vec<f64>,
    pub windows: usize,
    pub positive_windows: usize,
}

pub fn fit(split: &SplitDataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    fit_series(&split.train, spec, cfg, |_, _| {})
}

/// Trains on `series`, calling `on_epoch(epoch, mean_loss)` after each epoch.
pub fn fit_series(
    series: &[CleanSeries],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if spec.window_size != cfg.window_size {
        return Err(Error::ConfigInvalid(format!(
            "model window {} differs from training window {}",
            spec.window_size, cfg.window_size
        )));
    }
    let refs = collect_windows(series, cfg)?;
    let positives = refs.iter().filter(|r| r.window.label == Label::Syncope).count();
    if positives == 0 {
        return Err(Error::NoPositiveWindows);
    }

    let mut model = init_params_with(spec, cfg.seed, cfg.optimizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut chunk = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        let epoch_start = model.clone();
        let order = epoch_order(refs.len(), &mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            chunk.clear();
            chunk.extend(idx.iter().map(|&i| refs[i]));
            let batch = assemble_batch(series, &chunk, cfg.window_size);
            let (loss, grads) =
                loss_and_gradients(&model, batch.inputs.view(), &batch.target_classes())?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    last_good: Some(Box::new(epoch_start)),
                });
            }
            let GruModel {
                params, optimizer, ..
            } = &mut model;
            optimizer.step(params, &grads)?;
            total += loss * chunk.len() as f64;
        }
        model.optimizer.end_epoch();
        let mean = total / refs.len() as f64;
        on_epoch(epoch, mean);
        loss_trace.push(mean);
    }
    Ok(TrainOutcome {
        model,
        loss_trace,
        windows: refs.len(),
        positive_windows: positives,
    })
}

pub fn write_loss_trace(trace: &[f64], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in trace.iter().enumerate() {
        out.push_str(&format!("{e},{l}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_FORMAT: &str = "sentinel-gru";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: GruModel,
}

pub fn save_checkpoint(model: &GruModel, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    let text = serde_json::to_string(&ckpt)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<GruModel> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptCheckpoint("missing version".into()))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let ckpt: Checkpoint =
        serde_json::from_value(value).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::CorruptCheckpoint(format!("unknown format {}", ckpt.format)));
    }
    let model = ckpt.model;
    model.spec.validate()?;
    let expected = ModelParams::zeros(&model.spec);
    let shapes_match = expected
        .tensors()
        .iter()
        .zip(model.params.tensors())
        .all(|(a, b)| a.len() == b.len())
        && expected.tensors().len() == model.params.tensors().len()
        && model.optimizer.mean_sq_grad.len() == expected.tensors().len();
    if !shapes_match || !model.params.is_finite() {
        return Err(Error::CorruptCheckpoint("parameter shapes do not match spec".into()));
    }
    Ok(model)
}
