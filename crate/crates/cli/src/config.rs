// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sectioned TOML configuration and the fully resolved per-run settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sentinel_core::eval::default_threshold_grid;
use sentinel_core::hpo::{HpoParams, SearchSpace};
use sentinel_core::nn::AdadeltaConfig;
use sentinel_core::preprocess::PreprocessConfig;
use sentinel_core::synth::{CorruptionConfig, PatternConfig, SynthConfig};
use sentinel_core::{Error, ModelSpec, OutlierConfig, Result, TrainConfig};

pub const SEED_ENV: &str = "SENTINEL_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralSection {
    pub seed: Option<u64>,
    pub log_level: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_syncope: usize,
    pub n_nosyncope: usize,
    pub length_min: usize,
    pub length_max: usize,
    pub corrupt: bool,
    pub onset_lead: usize,
    pub bp_drop_fraction: f64,
    pub hr_rise: f64,
    pub hr_drop: f64,
    pub gap_probability: f64,
    pub spike_probability: f64,
    pub spike_sigma: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        SynthSection {
            n_syncope: s.n_syncope,
            n_nosyncope: s.n_nosyncope,
            length_min: s.length_range.0,
            length_max: s.length_range.1,
            corrupt: false,
            onset_lead: s.pattern.onset_lead,
            bp_drop_fraction: s.pattern.bp_drop_fraction,
            hr_rise: s.pattern.hr_rise,
            hr_drop: s.pattern.hr_drop,
            gap_probability: s.corruption.gap_probability,
            spike_probability: s.corruption.spike_probability,
            spike_sigma: s.corruption.spike_sigma,
        }
    }
}

impl SynthSection {
    pub fn to_config(&self, seed: u64) -> SynthConfig {
        let corruption = if self.corrupt {
            CorruptionConfig {
                gap_probability: self.gap_probability,
                spike_probability: self.spike_probability,
                spike_sigma: self.spike_sigma,
                ..Default::default()
            }
        } else {
            CorruptionConfig::none()
        };
        SynthConfig {
            n_syncope: self.n_syncope,
            n_nosyncope: self.n_nosyncope,
            length_range: (self.length_min, self.length_max),
            pattern: PatternConfig {
                onset_lead: self.onset_lead,
                bp_drop_fraction: self.bp_drop_fraction,
                hr_rise: self.hr_rise,
                hr_drop: self.hr_drop,
            },
            corruption,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub rate_hz: f64,
    pub trim_head: usize,
    pub trim_tail: usize,
    pub min_length: usize,
    pub median_window: usize,
    pub initial_threshold: f64,
    pub decay: f64,
    pub max_iterations: usize,
    pub train_fraction: f64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let p = PreprocessConfig::default();
        PreprocessSection {
            rate_hz: p.rate_hz,
            trim_head: p.trim_head,
            trim_tail: p.trim_tail,
            min_length: p.min_length,
            median_window: p.outliers.median_window,
            initial_threshold: p.outliers.initial_threshold,
            decay: p.outliers.decay,
            max_iterations: p.outliers.max_iterations,
            train_fraction: p.train_fraction,
        }
    }
}

impl PreprocessSection {
    pub fn to_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            rate_hz: self.rate_hz,
            trim_head: self.trim_head,
            trim_tail: self.trim_tail,
            min_length: self.min_length,
            outliers: OutlierConfig {
                median_window: self.median_window,
                initial_threshold: self.initial_threshold,
                decay: self.decay,
                max_iterations: self.max_iterations,
            },
            train_fraction: self.train_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub units: Vec<usize>,
    pub bidirectional: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            units: vec![100, 100],
            bidirectional: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub window: usize,
    pub stride: usize,
    pub horizon: usize,
    pub batch: usize,
    pub epochs: usize,
    pub rho: f64,
    pub epsilon: f64,
    pub lr_multiplier: f64,
    pub lr_decay: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            window: t.window_size,
            stride: t.stride,
            horizon: t.positive_horizon,
            batch: t.batch_size,
            epochs: t.epochs,
            rho: t.optimizer.rho,
            epsilon: t.optimizer.epsilon,
            lr_multiplier: t.optimizer.lr_multiplier,
            lr_decay: t.optimizer.lr_decay,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            window_size: self.window,
            stride: self.stride,
            positive_horizon: self.horizon,
            batch_size: self.batch,
            epochs: self.epochs,
            seed,
            optimizer: AdadeltaConfig {
                rho: self.rho,
                epsilon: self.epsilon,
                lr_multiplier: self.lr_multiplier,
                lr_decay: self.lr_decay,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: f64,
    pub consecutive: usize,
    /// Which preprocessed subset to score: `train` or `test`.
    pub split: String,
    pub thresholds: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            threshold: 0.7,
            consecutive: 1,
            split: "test".into(),
            thresholds: default_threshold_grid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoSection {
    pub phase: u8,
    pub budget: usize,
    pub n_init: usize,
    /// Training epochs per trial; the train section's value when absent.
    pub epochs: Option<usize>,
    pub pd_grid: usize,
}

impl Default for HpoSection {
    fn default() -> Self {
        HpoSection {
            phase: 1,
            budget: 30,
            n_init: sentinel_core::hpo::N_INIT,
            epochs: None,
            pd_grid: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub general: GeneralSection,
    pub synth: SynthSection,
    pub preprocess: PreprocessSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub hpo: HpoSection,
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::new(self.model.units.clone(), self.model.bidirectional, self.train.window)
    }

    /// Fixed values for search dimensions outside the active space.
    pub fn hpo_base(&self) -> HpoParams {
        HpoParams {
            gru_units: self.model.units.first().copied().unwrap_or(100),
            gru_layers: self.model.units.len().max(1),
            window_size: self.train.window,
            batch_size: self.train.batch,
            learning_rate: self.train.lr_multiplier,
            lr_decay: self.train.lr_decay,
            output_threshold: self.eval.threshold,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Synth,
    Preprocess,
    Train,
    Evaluate,
    Sweep,
    Hpo,
    Report,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Synth => "synth",
            CommandKind::Preprocess => "preprocess",
            CommandKind::Train => "train",
            CommandKind::Evaluate => "evaluate",
            CommandKind::Sweep => "sweep",
            CommandKind::Hpo => "hpo",
            CommandKind::Report => "report",
        }
    }
}

/// Everything a command needs, with all paths absolute. Serialized verbatim
/// into `run.json` so a run can be replayed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    pub seed: u64,
    pub log_level: String,
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub space: Option<SearchSpace>,
    pub settings: Settings,
}

/// Flag seed, then config seed, then `SENTINEL_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, settings: &Settings) -> Result<u64> {
    if let Some(s) = flag.or(settings.general.seed) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::ConfigInvalid(format!("{SEED_ENV}={v:?} is not an integer"))),
        Err(_) => Ok(0),
    }
}

pub fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceFile {
    dims: Vec<sentinel_core::hpo::Dimension>,
}

/// Reads a TOML search space: an array of `[[dims]]` tables with
/// `name`, `kind`, `lower` and `upper`.
pub fn load_space(path: &Path) -> Result<SearchSpace> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
    let f: SpaceFile =
        toml::from_str(&text).map_err(|e| Error::ConfigInvalid(e.message().to_string()))?;
    SearchSpace::new(f.dims)
}
