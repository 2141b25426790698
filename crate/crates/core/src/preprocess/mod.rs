// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cleaning chain from raw recordings to normalized, balanced train/test
//! sets: trim, length filter, gap filling, outlier removal, min-max scaling,
//! class balancing and stratified splitting.

pub mod gaps;
pub mod outliers;
pub mod signal;
pub mod split;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetCatalog, Label};
use crate::error::{Error, Result};

pub use gaps::{
    align_to_grid, fill_channel, fill_gaps, trim_series, FilledRecording, GridRecording,
    MIN_LENGTH, TRIM_HEAD, TRIM_TAIL,
};
pub use outliers::{remove_outliers_iterative, OutlierConfig, OutlierOutcome};
pub use signal::{median_filter, minmax_denormalize, minmax_normalize, studentize, MinMax};
pub use split::{balance_classes, stratified_split, Labelled};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub mbp: MinMax,
    pub hr: MinMax,
}

/// Gap-free, outlier-cleaned, min-max normalized two-channel series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanSeries {
    pub id: String,
    pub label: Label,
    pub mbp: Vec<f64>,
    pub hr: Vec<f64>,
    pub marker_index: Option<usize>,
    pub rate_hz: f64,
    pub norm_params: NormParams,
}

impl CleanSeries {
    pub fn len(&self) -> usize {
        self.mbp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mbp.is_empty()
    }

    /// Checks the structural invariants, with a caller-chosen minimum length.
    pub fn check(&self, min_length: usize) -> Result<()> {
        if self.mbp.len() != self.hr.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mbp.len(),
                actual: self.hr.len(),
            });
        }
        if self.len() < min_length {
            return Err(Error::SeriesTooShort {
                id: self.id.clone(),
                len: self.len(),
                needed: min_length,
            });
        }
        if self
            .mbp
            .iter()
            .chain(&self.hr)
            .any(|v| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(Error::DegenerateSignal("value outside [-1, 1]"));
        }
        if self.marker_index.is_some_and(|m| m >= self.len()) {
            return Err(Error::ConfigInvalid(format!("{}: marker past end", self.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub rate_hz: f64,
    pub trim_head: usize,
    pub trim_tail: usize,
    pub min_length: usize,
    pub outliers: OutlierConfig,
    pub train_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            rate_hz: crate::DEFAULT_RATE_HZ,
            trim_head: TRIM_HEAD,
            trim_tail: TRIM_TAIL,
            min_length: MIN_LENGTH,
            outliers: OutlierConfig::default(),
            train_fraction: 154.0 / 192.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<CleanSeries>,
    pub test: Vec<CleanSeries>,
    pub seed: u64,
}

pub fn split_train_test(
    balanced: Vec<CleanSeries>,
    train_fraction: f64,
    seed: u64,
) -> Result<SplitDataset> {
    let (train, test) = stratified_split(balanced, train_fraction, seed)?;
    Ok(SplitDataset { train, test, seed })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Conflict,
    TooShort,
    GapFill,
    Outliers,
    Normalize,
    Balance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub id: String,
    pub stage: Stage,
    pub reason: String,
}

/// What happened to each series on the way through the pipeline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub input: usize,
    pub dropped: Vec<Dropped>,
    pub cleaned: usize,
    pub balanced: usize,
    /// Outlier passes and replaced sample counts per surviving series and channel.
    pub outlier_stats: Vec<(String, usize, usize, usize, usize)>,
}

impl DropReport {
    pub fn counts(&self) -> BTreeMap<Stage, usize> {
        let mut out = BTreeMap::new();
        for d in &self.dropped {
            *out.entry(d.stage).or_insert(0) += 1;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub split: SplitDataset,
    pub report: DropReport,
}

struct Cleaned {
    series: CleanSeries,
    mbp_outliers: OutlierOutcome,
    hr_outliers: OutlierOutcome,
}

fn clean_one(
    raw: &crate::data::RawRecording,
    cfg: &PreprocessConfig,
) -> std::result::Result<Cleaned, (Stage, String)> {
    let grid = gaps::trim_grid(
        align_to_grid(raw, cfg.rate_hz),
        cfg.trim_head,
        cfg.trim_tail,
        cfg.min_length,
    )
    .ok_or((Stage::TooShort, "fewer than the minimum samples after trimming".into()))?;
    let filled = fill_gaps(&grid).map_err(|e| (Stage::GapFill, e.to_string()))?;
    let outlier = |x: &[f64]| {
        remove_outliers_iterative(x, &cfg.outliers).map_err(|e| (Stage::Outliers, e.to_string()))
    };
    let mbp_outliers = outlier(&filled.mbp)?;
    let hr_outliers = outlier(&filled.hr)?;
    let normalize =
        |x: &[f64]| minmax_normalize(x).map_err(|e| (Stage::Normalize, e.to_string()));
    let (mbp, mbp_mm) = normalize(&mbp_outliers.cleaned)?;
    let (hr, hr_mm) = normalize(&hr_outliers.cleaned)?;
    Ok(Cleaned {
        series: CleanSeries {
            id: filled.id,
            label: filled.label,
            mbp,
            hr,
            marker_index: filled.marker_index,
            rate_hz: cfg.rate_hz,
            norm_params: NormParams {
                mbp: mbp_mm,
                hr: hr_mm,
            },
        },
        mbp_outliers,
        hr_outliers,
    })
}

/// Cleans every recording without balancing or splitting. Series failing a
/// stage are listed in the report rather than aborting the run.
pub fn clean_catalog(
    catalog: &DatasetCatalog,
    cfg: &PreprocessConfig,
) -> Result<(Vec<CleanSeries>, DropReport)> {
    cfg.outliers.validate()?;
    let mut report = DropReport {
        input: catalog.records.len(),
        ..Default::default()
    };
    let conflicted = catalog.conflicted_ids();
    let candidates: Vec<_> = catalog
        .records
        .iter()
        .filter(|r| {
            if conflicted.contains(r.id.as_str()) {
                report.dropped.push(Dropped {
                    id: r.id.clone(),
                    stage: Stage::Conflict,
                    reason: "identical content under both labels".into(),
                });
                false
            } else {
                true
            }
        })
        .collect();
    let results: Vec<_> = candidates
        .par_iter()
        .map(|raw| (raw.id.clone(), clean_one(raw, cfg)))
        .collect();
    let mut cleaned = Vec::new();
    for (id, result) in results {
        match result {
            Ok(c) => {
                report.outlier_stats.push((
                    id,
                    c.mbp_outliers.iterations,
                    c.mbp_outliers.removed.len(),
                    c.hr_outliers.iterations,
                    c.hr_outliers.removed.len(),
                ));
                cleaned.push(c.series);
            }
            Err((stage, reason)) => report.dropped.push(Dropped { id, stage, reason }),
        }
    }
    report.cleaned = cleaned.len();
    Ok((cleaned, report))
}

/// trim -> length filter -> gap fill -> outliers -> normalize -> balance -> split.
pub fn preprocess_pipeline(
    catalog: &DatasetCatalog,
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<PipelineOutput> {
    let (cleaned, mut report) = clean_catalog(catalog, cfg)?;
    if cleaned.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let before: Vec<String> = cleaned.iter().map(|s| s.id.clone()).collect();
    let balanced = balance_classes(cleaned, seed);
    if balanced.is_empty() {
        return Err(Error::TooFewSeries(
            "balancing needs at least one series of each class".into(),
        ));
    }
    let kept: std::collections::HashSet<&str> = balanced.iter().map(|s| s.id.as_str()).collect();
    for id in before.iter().filter(|id| !kept.contains(id.as_str())) {
        report.dropped.push(Dropped {
            id: id.clone(),
            stage: Stage::Balance,
            reason: "not selected when undersampling the majority class".into(),
        });
    }
    report.balanced = balanced.len();
    let split = split_train_test(balanced, cfg.train_fraction, seed)?;
    Ok(PipelineOutput { split, report })
}

/// Writes a cleaned series as CSV with a `#` header block carrying the
/// metadata and the per-channel normalization bounds.
pub fn write_clean_series(series: &CleanSeries, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(series.len() * 40 + 200);
    let _ = writeln!(out, "# id={}", series.id);
    let _ = writeln!(out, "# label={}", series.label);
    let _ = writeln!(out, "# rate_hz={}", series.rate_hz);
    if let Some(m) = series.marker_index {
        let _ = writeln!(out, "# marker_index={m}");
    }
    let np = series.norm_params;
    let _ = writeln!(out, "# norm_min={},{}", np.mbp.0, np.hr.0);
    let _ = writeln!(out, "# norm_max={},{}", np.mbp.1, np.hr.1);
    out.push_str("mBP,HR\n");
    for (m, h) in series.mbp.iter().zip(&series.hr) {
        let _ = writeln!(out, "{m},{h}");
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_clean_series(path: &Path) -> Result<CleanSeries> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64 + 1,
        message: msg.to_string(),
    };
    let mut meta: BTreeMap<&str, &str> = BTreeMap::new();
    let mut mbp = Vec::new();
    let mut hr = Vec::new();
    let mut header_seen = false;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if let Some(rest) = line.strip_prefix('#') {
            let (k, v) = rest.trim().split_once('=').ok_or_else(|| bad(ln, "bad header"))?;
            meta.insert(k.trim(), v.trim());
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| bad(ln, "expected two columns"))?;
        mbp.push(a.trim().parse().map_err(|_| bad(ln, "bad mBP value"))?);
        hr.push(b.trim().parse().map_err(|_| bad(ln, "bad HR value"))?);
    }
    let get = |k: &str| meta.get(k).copied().ok_or_else(|| bad(0, &format!("missing {k}")));
    let pair = |k: &str| -> Result<(f64, f64)> {
        let v = get(k)?;
        let (a, b) = v.split_once(',').ok_or_else(|| bad(0, k))?;
        Ok((
            a.parse().map_err(|_| bad(0, k))?,
            b.parse().map_err(|_| bad(0, k))?,
        ))
    };
    let mins = pair("norm_min")?;
    let maxs = pair("norm_max")?;
    Ok(CleanSeries {
        id: get("id")?.to_string(),
        label: get("label")?.parse()?,
        rate_hz: get("rate_hz")?.parse().map_err(|_| bad(0, "rate_hz"))?,
        marker_index: meta
            .get("marker_index")
            .map(|m| m.parse().map_err(|_| bad(0, "marker_index")))
            .transpose()?,
        norm_params: NormParams {
            mbp: (mins.0, maxs.0),
            hr: (mins.1, maxs.1),
        },
        mbp,
        hr,
    })
}

/// File-system-safe name for a series id such as `syncope/p001`.
pub fn series_file_name(id: &str) -> String {
    format!("{}.csv", id.replace(['/', '\\'], "__"))
}

/// Persists a split as `train/` and `test/` directories of cleaned CSVs.
pub fn write_split(split: &SplitDataset, dir: &Path) -> Result<()> {
    for (name, set) in [("train", &split.train), ("test", &split.test)] {
        let sub = dir.join(name);
        fs::create_dir_all(&sub)?;
        for s in set {
            write_clean_series(s, &sub.join(series_file_name(&s.id)))?;
        }
    }
    Ok(())
}

pub fn read_series_dir(dir: &Path) -> Result<Vec<CleanSeries>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_clean_series(p)).collect()
}

pub fn read_split(dir: &Path, seed: u64) -> Result<SplitDataset> {
    Ok(SplitDataset {
        train: read_series_dir(&dir.join("train"))?,
        test: read_series_dir(&dir.join("test"))?,
        seed,
    })
}
