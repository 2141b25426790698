// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded generator of two-channel recordings with a pre-syncopal pattern,
//! missing-sample gaps and spike artifacts.
//!
//! Each series draws its own mBP and HR baselines, then adds AR(1) noise.
//! Syncope series carry a pattern over the `onset_lead` samples before a
//! marker placed in the final third: mBP falls by `bp_drop_fraction` of its
//! baseline (fastest at onset) while HR first rises by `hr_rise` and then
//! collapses to `hr_drop` below baseline just before the marker. Values after
//! the marker stay at the collapsed level.

use std::fs;
use std::path::{Path, PathBuf};

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::Normal;

use crate::data::{write_manifest, write_recording, Channel, Label, ManifestEntry, RawRecording, Sample, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::preprocess::signal::mean_std;

pub const CORRUPTION_FILE: &str = "corruption.csv";

/// Samples kept free of the pattern after the leading trim, so a full
/// evaluation window fits before onset.
pub const ONSET_MARGIN: usize = 500 + 100;
/// Minimum number of samples after the marker.
pub const MARKER_TAIL: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternConfig {
    pub onset_lead: usize,
    pub bp_drop_fraction: f64,
    pub hr_rise: f64,
    pub hr_drop: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        PatternConfig {
            onset_lead: 750,
            bp_drop_fraction: 0.3,
            hr_rise: 20.0,
            hr_drop: 25.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionConfig {
    /// Per-sample, per-channel probability that a gap starts.
    pub gap_probability: f64,
    pub gap_length: (usize, usize),
    /// Per-sample, per-channel probability of a spike at a present sample.
    pub spike_probability: f64,
    /// Spike size in standard deviations of the clean channel.
    pub spike_sigma: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            gap_probability: 0.002,
            gap_length: (2, 20),
            spike_probability: 0.005,
            spike_sigma: 8.0,
        }
    }
}

impl CorruptionConfig {
    pub fn none() -> Self {
        CorruptionConfig {
            gap_probability: 0.0,
            spike_probability: 0.0,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_syncope: usize,
    pub n_nosyncope: usize,
    /// Inclusive range of series lengths in samples.
    pub length_range: (usize, usize),
    pub rate_hz: f64,
    /// Between-series baseline distributions.
    pub hr_mean: f64,
    pub hr_std: f64,
    pub mbp_mean: f64,
    pub mbp_std: f64,
    pub ar_coefficient: f64,
    /// Stationary standard deviation of the within-series noise.
    pub mbp_noise_std: f64,
    pub hr_noise_std: f64,
    pub pattern: PatternConfig,
    pub corruption: CorruptionConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_syncope: 60,
            n_nosyncope: 60,
            length_range: (2000, 4000),
            rate_hz: crate::DEFAULT_RATE_HZ,
            hr_mean: 70.0,
            hr_std: 5.0,
            mbp_mean: 85.0,
            mbp_std: 7.0,
            ar_coefficient: 0.98,
            mbp_noise_std: 3.0,
            hr_noise_std: 2.0,
            pattern: PatternConfig::default(),
            corruption: CorruptionConfig::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        let c = &self.corruption;
        for (name, p) in [("gap_probability", c.gap_probability), ("spike_probability", c.spike_probability)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if c.gap_length.0 == 0 || c.gap_length.0 > c.gap_length.1 {
            return bad("gap length range must be positive and ordered".into());
        }
        let (lo, hi) = self.length_range;
        if lo > hi {
            return bad("length range must be ordered".into());
        }
        let p = &self.pattern;
        if p.onset_lead == 0 || p.onset_lead >= lo {
            return bad("onset lead must be positive and below the minimum length".into());
        }
        if self.n_syncope > 0 && marker_range(lo, p.onset_lead).is_none() {
            return bad(format!(
                "length {lo} leaves no room for a marker after {} samples of lead",
                p.onset_lead
            ));
        }
        if !(p.bp_drop_fraction > 0.0 && p.bp_drop_fraction < 1.0) {
            return bad("bp_drop_fraction must lie in (0, 1)".into());
        }
        let positive = [
            ("hr_rise", p.hr_rise),
            ("hr_drop", p.hr_drop),
            ("spike_sigma", c.spike_sigma),
            ("rate_hz", self.rate_hz),
            ("hr_mean", self.hr_mean),
            ("mbp_mean", self.mbp_mean),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        let non_negative = [
            ("hr_std", self.hr_std),
            ("mbp_std", self.mbp_std),
            ("mbp_noise_std", self.mbp_noise_std),
            ("hr_noise_std", self.hr_noise_std),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if !(self.ar_coefficient >= 0.0 && self.ar_coefficient < 1.0) {
            return bad("ar_coefficient must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Admissible marker indices for a series of `len` samples.
fn marker_range(len: usize, lead: usize) -> Option<(usize, usize)> {
    let lo = (2 * len).div_ceil(3).max(ONSET_MARGIN + lead);
    let hi = len.checked_sub(MARKER_TAIL)?;
    (lo <= hi).then_some((lo, hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Gap,
    Spike,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionEvent {
    pub channel: Channel,
    pub kind: CorruptionKind,
    pub index: usize,
}

/// One generated recording with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSeries {
    pub id: String,
    pub label: Label,
    pub rate_hz: f64,
    pub clean_mbp: Vec<f64>,
    pub clean_hr: Vec<f64>,
    /// Corrupted channels; `None` marks a gap.
    pub mbp: Vec<Option<f64>>,
    pub hr: Vec<Option<f64>>,
    pub marker_index: Option<usize>,
    pub events: Vec<CorruptionEvent>,
}

impl SynthSeries {
    pub fn len(&self) -> usize {
        self.clean_mbp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_mbp.is_empty()
    }

    pub fn spike_indices(&self, channel: Channel) -> Vec<usize> {
        self.events
            .iter()
            .filter(|e| e.channel == channel && e.kind == CorruptionKind::Spike)
            .map(|e| e.index)
            .collect()
    }

    pub fn time_s(&self, i: usize) -> f64 {
        i as f64 / self.rate_hz
    }

    pub fn to_raw(&self, source_path: PathBuf) -> RawRecording {
        let samples = |x: &[Option<f64>]| -> Vec<Sample> {
            x.iter()
                .enumerate()
                .filter_map(|(i, v)| v.map(|value| Sample { time_s: self.time_s(i), value }))
                .collect()
        };
        RawRecording {
            id: self.id.clone(),
            label: self.label,
            mbp: samples(&self.mbp),
            hr: samples(&self.hr),
            marker_time: self.marker_index.map(|m| self.time_s(m)),
            source_path,
        }
    }
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn ar1(n: usize, phi: f64, std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let innov = std * (1.0 - phi * phi).sqrt();
    let mut x = Vec::with_capacity(n);
    let mut cur = std * unit.sample(rng);
    for _ in 0..n {
        x.push(cur);
        cur = phi * cur + innov * unit.sample(rng);
    }
    x
}

/// Pattern progress in `[0, 1]` at sample `i`, or `None` before onset.
fn progress(i: usize, marker: usize, lead: usize) -> Option<f64> {
    let onset = marker - lead;
    (i >= onset).then(|| ((i - onset) as f64 / lead as f64).min(1.0))
}

/// Multiplicative mBP factor along the pattern.
pub fn bp_factor(p: f64, drop_fraction: f64) -> f64 {
    1.0 - drop_fraction * (1.0 - (1.0 - p) * (1.0 - p))
}

/// Additive HR offset along the pattern.
pub fn hr_offset(p: f64, rise: f64, drop: f64) -> f64 {
    if p < 0.1 {
        rise * p / 0.1
    } else if p < 0.9 {
        rise
    } else {
        rise - (rise + drop) * (p - 0.9) / 0.1
    }
}

fn corrupt_channel(
    clean: &[f64],
    channel: Channel,
    cfg: &CorruptionConfig,
    rng: &mut ChaCha8Rng,
    events: &mut Vec<CorruptionEvent>,
) -> Vec<Option<f64>> {
    let n = clean.len();
    let mut out: Vec<Option<f64>> = clean.iter().copied().map(Some).collect();
    let mut i = 0;
    while i < n {
        if rng.gen::<f64>() < cfg.gap_probability {
            let len = rng.gen_range(cfg.gap_length.0..=cfg.gap_length.1);
            for (j, slot) in out.iter_mut().enumerate().take((i + len).min(n)).skip(i) {
                *slot = None;
                events.push(CorruptionEvent { channel, kind: CorruptionKind::Gap, index: j });
            }
            i += len;
        } else {
            i += 1;
        }
    }
    let (_, sigma) = mean_std(clean);
    for (j, v) in out.iter_mut().enumerate() {
        let hit = rng.gen::<f64>() < cfg.spike_probability;
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        if let (true, Some(x)) = (hit, v.as_mut()) {
            *x = round4(*x + sign * cfg.spike_sigma * sigma);
            events.push(CorruptionEvent { channel, kind: CorruptionKind::Spike, index: j });
        }
    }
    out
}

fn series_id(label: Label, index: usize) -> String {
    let prefix = match label {
        Label::Syncope => "s",
        Label::NoSyncope => "n",
    };
    format!("{}/{prefix}{index:04}", label.as_str())
}

/// Generates the `index`-th series of the given class.
pub fn generate_series(cfg: &SynthConfig, label: Label, index: usize) -> Result<SynthSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((label.class_index() as u64) << 32) | index as u64);
    let len = rng.gen_range(cfg.length_range.0..=cfg.length_range.1);
    let normal = |m: f64, s: f64| Normal::new(m, s).map_err(|e| Error::ConfigInvalid(e.to_string()));
    let base_mbp = normal(cfg.mbp_mean, cfg.mbp_std.max(1e-12))?.sample(&mut rng);
    let base_hr = normal(cfg.hr_mean, cfg.hr_std.max(1e-12))?.sample(&mut rng);
    let noise_mbp = ar1(len, cfg.ar_coefficient, cfg.mbp_noise_std, &mut rng);
    let noise_hr = ar1(len, cfg.ar_coefficient, cfg.hr_noise_std, &mut rng);
    let p = &cfg.pattern;
    let marker_index = match label {
        Label::NoSyncope => None,
        Label::Syncope => {
            let (lo, hi) = marker_range(len, p.onset_lead).ok_or_else(|| {
                Error::ConfigInvalid(format!("length {len} leaves no room for a marker"))
            })?;
            Some(rng.gen_range(lo..=hi))
        }
    };
    let mut clean_mbp = Vec::with_capacity(len);
    let mut clean_hr = Vec::with_capacity(len);
    for i in 0..len {
        let prog = marker_index.and_then(|m| progress(i, m, p.onset_lead));
        let (f, off) = prog.map_or((1.0, 0.0), |q| {
            (bp_factor(q, p.bp_drop_fraction), hr_offset(q, p.hr_rise, p.hr_drop))
        });
        clean_mbp.push(round4(base_mbp * f + noise_mbp[i]));
        clean_hr.push(round4(base_hr + off + noise_hr[i]));
    }
    let mut events = Vec::new();
    let mbp = corrupt_channel(&clean_mbp, Channel::Mbp, &cfg.corruption, &mut rng, &mut events);
    let hr = corrupt_channel(&clean_hr, Channel::Hr, &cfg.corruption, &mut rng, &mut events);
    Ok(SynthSeries {
        id: series_id(label, index),
        label,
        rate_hz: cfg.rate_hz,
        clean_mbp,
        clean_hr,
        mbp,
        hr,
        marker_index,
        events,
    })
}

/// All series in memory: syncope first, then no-syncope.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthSeries>> {
    cfg.validate()?;
    let jobs: Vec<(Label, usize)> = (0..cfg.n_syncope)
        .map(|i| (Label::Syncope, i))
        .chain((0..cfg.n_nosyncope).map(|i| (Label::NoSyncope, i)))
        .collect();
    jobs.into_par_iter()
        .map(|(label, i)| generate_series(cfg, label, i))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub files: usize,
    pub syncope: usize,
    pub nosyncope: usize,
    pub spikes: usize,
    pub gap_samples: usize,
}

/// Writes `syncope/`, `nosyncope/`, the manifest and the corruption sidecar.
pub fn generate_dataset(cfg: &SynthConfig, dir: &Path) -> Result<SynthSummary> {
    let series = generate(cfg)?;
    fs::create_dir_all(dir)?;
    series.par_iter().try_for_each(|s| {
        let path = dir.join(format!("{}.csv", s.id));
        write_recording(&s.to_raw(path.clone()), &path)
    })?;
    let manifest: Vec<ManifestEntry> = series
        .iter()
        .map(|s| ManifestEntry {
            id: s.id.clone(),
            label: s.label,
            marker_s: s.marker_index.map(|m| s.time_s(m)),
        })
        .collect();
    write_manifest(&dir.join(MANIFEST_FILE), &manifest)?;
    let mut sidecar = String::from("id,channel,kind,index\n");
    let (mut spikes, mut gap_samples) = (0, 0);
    for s in &series {
        for e in &s.events {
            let kind = match e.kind {
                CorruptionKind::Gap => {
                    gap_samples += 1;
                    "gap"
                }
                CorruptionKind::Spike => {
                    spikes += 1;
                    "spike"
                }
            };
            sidecar.push_str(&format!("{},{},{kind},{}\n", s.id, e.channel.name(), e.index));
        }
    }
    fs::write(dir.join(CORRUPTION_FILE), sidecar)?;
    Ok(SynthSummary {
        files: series.len(),
        syncope: cfg.n_syncope,
        nosyncope: cfg.n_nosyncope,
        spikes,
        gap_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_recording;

    fn small(n: usize) -> SynthConfig {
        SynthConfig {
            n_syncope: n,
            n_nosyncope: n,
            length_range: (2000, 2400),
            ..Default::default()
        }
    }

    #[test]
    fn clean_pattern_by_construction() {
        let cfg = SynthConfig { corruption: CorruptionConfig::none(), ..small(1) };
        let all = generate(&cfg).unwrap();
        assert!(all.iter().all(|s| s.events.is_empty()));
        assert!(all.iter().all(|s| s.mbp.iter().chain(&s.hr).all(|v| v.is_some())));
        let syn = &all[0];
        let m = syn.marker_index.unwrap();
        assert!(m >= 2 * syn.len() / 3 && m + MARKER_TAIL <= syn.len());
        assert!(m - cfg.pattern.onset_lead >= ONSET_MARGIN);
        let lead = &syn.clean_mbp[m + 1 - cfg.pattern.onset_lead..=m];
        let first_half = &syn.clean_mbp[..syn.len() / 2];
        assert!(mean_std(lead).0 < mean_std(first_half).0);
    }

    #[test]
    fn pattern_shape() {
        assert_eq!(bp_factor(0.0, 0.3), 1.0);
        assert!((bp_factor(1.0, 0.3) - 0.7).abs() < 1e-15);
        assert!(bp_factor(0.5, 0.3) < 1.0 - 0.15);
        assert_eq!(hr_offset(0.0, 20.0, 25.0), 0.0);
        assert_eq!(hr_offset(0.5, 20.0, 25.0), 20.0);
        assert!((hr_offset(1.0, 20.0, 25.0) + 25.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = small(2);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..small(2) };
        assert_ne!(generate(&cfg).unwrap()[0].clean_mbp, generate(&other).unwrap()[0].clean_mbp);
    }

    #[test]
    fn tree_is_byte_identical_and_parses() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = small(2);
        generate_dataset(&cfg, a.path()).unwrap();
        generate_dataset(&cfg, b.path()).unwrap();
        for rel in ["syncope/s0001.csv", "nosyncope/n0000.csv", MANIFEST_FILE, CORRUPTION_FILE] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());
        }
        let rec = load_recording(&a.path().join("syncope/s0001.csv")).unwrap();
        rec.validate_rate(1.25).unwrap();
        let series = generate_series(&cfg, Label::Syncope, 1).unwrap();
        let present = series.mbp.iter().filter(|v| v.is_some()).count();
        assert_eq!(rec.mbp.len(), present);
    }

    #[test]
    fn spikes_match_ground_truth() {
        let s = generate_series(&small(1), Label::NoSyncope, 0).unwrap();
        let spikes = s.spike_indices(Channel::Mbp);
        assert!(!spikes.is_empty());
        let (_, sigma) = mean_std(&s.clean_mbp);
        for i in 0..s.len() {
            if let Some(v) = s.mbp[i] {
                let moved = (v - s.clean_mbp[i]).abs() > 1e-3;
                assert_eq!(moved, spikes.contains(&i));
                if moved {
                    assert!(((v - s.clean_mbp[i]).abs() - 8.0 * sigma).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn spike_count_is_binomial() {
        let mut total = 0usize;
        for seed in 0..50 {
            let cfg = SynthConfig {
                length_range: (2000, 2000),
                corruption: CorruptionConfig {
                    gap_probability: 0.0,
                    spike_probability: 0.01,
                    ..Default::default()
                },
                seed,
                ..small(0)
            };
            total += generate_series(&cfg, Label::NoSyncope, 0).unwrap().spike_indices(Channel::Hr).len();
        }
        let (n, p) = (50.0 * 2000.0, 0.01f64);
        let (mean, sd) = (n * p, (n * p * (1.0 - p)).sqrt());
        assert!((total as f64 - mean).abs() <= 3.0 * sd, "{total}");
    }

    #[test]
    fn rejects_bad_config() {
        let bad = [
            SynthConfig { length_range: (1000, 1200), ..small(1) },
            SynthConfig { corruption: CorruptionConfig { spike_probability: 1.5, ..Default::default() }, ..small(1) },
            SynthConfig { pattern: PatternConfig { hr_rise: 0.0, ..Default::default() }, ..small(1) },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
        }
    }
}
