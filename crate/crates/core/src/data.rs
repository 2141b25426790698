// SPDX-License-Identifier: MIT OR Apache-2.0

//! Recording ingestion: one CSV per recording (`time_s,mBP,HR`), labels from
//! the parent directory (`syncope/`, `nosyncope/`) and optional markers from
//! a `manifest.csv` next to them.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Syncope,
    NoSyncope,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Syncope => "syncope",
            Label::NoSyncope => "nosyncope",
        }
    }

    /// Class index used by the classifier head.
    pub fn class_index(self) -> usize {
        match self {
            Label::NoSyncope => 0,
            Label::Syncope => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "syncope" => Ok(Label::Syncope),
            "nosyncope" | "no_syncope" | "no findings" => Ok(Label::NoSyncope),
            other => Err(Error::ConfigInvalid(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "mBP")]
    Mbp,
    #[serde(rename = "HR")]
    Hr,
}

impl Channel {
    pub const ALL: [Channel; 2] = [Channel::Mbp, Channel::Hr];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Mbp => "mBP",
            Channel::Hr => "HR",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time_s: f64,
    pub value: f64,
}

/// A labelled two-channel recording as read from disk. Missing samples are
/// simply absent from the per-channel sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecording {
    pub id: String,
    pub label: Label,
    pub mbp: Vec<Sample>,
    pub hr: Vec<Sample>,
    pub marker_time: Option<f64>,
    pub source_path: PathBuf,
}

impl RawRecording {
    pub fn channel(&self, channel: Channel) -> &[Sample] {
        match channel {
            Channel::Mbp => &self.mbp,
            Channel::Hr => &self.hr,
        }
    }

    /// Both channels carry at least one sample.
    pub fn is_complete(&self) -> bool {
        !self.mbp.is_empty() && !self.hr.is_empty()
    }

    /// Earliest and latest timestamp across both channels.
    pub fn time_span(&self) -> Option<(f64, f64)> {
        let firsts = [self.mbp.first(), self.hr.first()];
        let lasts = [self.mbp.last(), self.hr.last()];
        let start = firsts.iter().flatten().map(|s| s.time_s).reduce(f64::min)?;
        let end = lasts.iter().flatten().map(|s| s.time_s).reduce(f64::max)?;
        Some((start, end))
    }

    /// Checks that every timestamp sits on the sampling grid anchored at the
    /// first sample, within 1% of the sample period.
    pub fn validate_rate(&self, rate_hz: f64) -> Result<()> {
        let Some((origin, _)) = self.time_span() else {
            return Ok(());
        };
        for s in self.mbp.iter().chain(&self.hr) {
            let pos = (s.time_s - origin) * rate_hz;
            if (pos - pos.round()).abs() > 0.01 {
                return Err(Error::OffGrid {
                    path: self.source_path.clone(),
                    time_s: s.time_s,
                    rate_hz,
                });
            }
        }
        Ok(())
    }

    fn identical_content(&self, other: &RawRecording) -> bool {
        let same = |a: &[Sample], b: &[Sample]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.value == y.value)
        };
        same(&self.mbp, &other.mbp) && same(&self.hr, &other.hr)
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn label_from_dir(path: &Path) -> Option<Label> {
    path.parent()?.file_name()?.to_str()?.parse().ok()
}

/// Reads a recording, taking the label from the parent directory name.
pub fn load_recording(path: &Path) -> Result<RawRecording> {
    let label = label_from_dir(path).ok_or_else(|| {
        Error::ConfigInvalid(format!(
            "{}: parent directory is not `syncope` or `nosyncope`",
            path.display()
        ))
    })?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    read_recording(path, id, label)
}

/// Reads a recording with an explicit id and label.
pub fn read_recording(path: &Path, id: String, label: Label) -> Result<RawRecording> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let time_col = column("time_s").ok_or_else(|| parse_err(path, 1, "missing time_s column"))?;
    let mbp_col = column("mBP");
    let hr_col = column("HR");
    if mbp_col.is_none() && hr_col.is_none() {
        return Err(Error::MissingChannel(path.to_path_buf()));
    }

    let mut mbp = Vec::new();
    let mut hr = Vec::new();
    let mut last_time: Option<f64> = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |idx: usize| record.get(idx).unwrap_or("");
        let time: f64 = cell(time_col)
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad time `{}`", cell(time_col))))?;
        if !time.is_finite() {
            return Err(parse_err(path, line, "non-finite time"));
        }
        if last_time.is_some_and(|t| time <= t) {
            return Err(Error::NonMonotonicTime {
                path: path.to_path_buf(),
                line,
            });
        }
        last_time = Some(time);
        for (col, out) in [(mbp_col, &mut mbp), (hr_col, &mut hr)] {
            let Some(col) = col else { continue };
            let raw = cell(col);
            if raw.is_empty() {
                continue;
            }
            let value: f64 = raw
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad value `{raw}`")))?;
            if !value.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value `{raw}`")));
            }
            out.push(Sample {
                time_s: time,
                value,
            });
        }
    }
    if mbp.is_empty() && hr.is_empty() {
        return Err(Error::MissingChannel(path.to_path_buf()));
    }
    Ok(RawRecording {
        id,
        label,
        mbp,
        hr,
        marker_time: None,
        source_path: path.to_path_buf(),
    })
}

/// Writes a recording in the ingestion CSV format. Rows cover the union of
/// both channels' timestamps; a missing sample is an empty cell.
pub fn write_recording(rec: &RawRecording, path: &Path) -> Result<()> {
    let mut rows: BTreeMap<u64, (f64, Option<f64>, Option<f64>)> = BTreeMap::new();
    // Ordered key for non-negative and negative finite times alike.
    let key = |t: f64| {
        let bits = t.to_bits();
        if t.is_sign_negative() {
            !bits
        } else {
            bits | (1 << 63)
        }
    };
    for s in &rec.mbp {
        rows.entry(key(s.time_s)).or_insert((s.time_s, None, None)).1 = Some(s.value);
    }
    for s in &rec.hr {
        rows.entry(key(s.time_s)).or_insert((s.time_s, None, None)).2 = Some(s.value);
    }
    let mut out = String::with_capacity(rows.len() * 24);
    out.push_str("time_s,mBP,HR\n");
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (t, m, h) in rows.values() {
        out.push_str(&format!("{t},{},{}\n", fmt_opt(*m), fmt_opt(*h)));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Label,
    pub marker_s: Option<f64>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let mut entries = Vec::new();
    for row in reader.deserialize::<ManifestEntry>() {
        let entry = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        if entry.marker_s.is_some_and(|m| !m.is_finite()) {
            return Err(parse_err(path, 0, format!("non-finite marker for {}", entry.id)));
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "id,label,marker_s")?;
    for e in entries {
        let marker = e.marker_s.map(|m| m.to_string()).unwrap_or_default();
        writeln!(file, "{},{},{}", e.id, e.label, marker)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub syncope: usize,
    pub nosyncope: usize,
}

impl LabelCounts {
    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Syncope => self.syncope,
            Label::NoSyncope => self.nosyncope,
        }
    }

    pub fn total(&self) -> usize {
        self.syncope + self.nosyncope
    }

    fn bump(&mut self, label: Label) {
        match label {
            Label::Syncope => self.syncope += 1,
            Label::NoSyncope => self.nosyncope += 1,
        }
    }
}

/// A file that could not be ingested, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanIssue {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct DatasetCatalog {
    pub records: Vec<RawRecording>,
    pub counts: LabelCounts,
    pub conflicts: Vec<(String, String)>,
    pub issues: Vec<ScanIssue>,
    pub rate_hz: f64,
}

impl DatasetCatalog {
    pub fn from_records(records: Vec<RawRecording>, rate_hz: f64) -> Self {
        let mut counts = LabelCounts::default();
        for r in &records {
            counts.bump(r.label);
        }
        DatasetCatalog {
            records,
            counts,
            conflicts: Vec::new(),
            issues: Vec::new(),
            rate_hz,
        }
    }

    pub fn get(&self, id: &str) -> Option<&RawRecording> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Ids taking part in any reported conflict.
    pub fn conflicted_ids(&self) -> std::collections::HashSet<&str> {
        self.conflicts
            .iter()
            .flat_map(|(a, b)| [a.as_str(), b.as_str()])
            .collect()
    }
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// Ingests a dataset tree. Files under `syncope/` and `nosyncope/` take their
/// label from the directory and use `<dir>/<stem>` as id; markers come from
/// `manifest.csv` at the root, matched by id or by stem. Unreadable files are
/// collected in `issues`.
pub fn scan_dataset(dir: &Path, rate_hz: f64) -> Result<DatasetCatalog> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut issues = Vec::new();
    let manifest: HashMap<String, ManifestEntry> = if manifest_path.is_file() {
        match read_manifest(&manifest_path) {
            Ok(entries) => entries.into_iter().map(|e| (e.id.clone(), e)).collect(),
            Err(e) => {
                issues.push(ScanIssue {
                    path: manifest_path.clone(),
                    message: e.to_string(),
                });
                HashMap::new()
            }
        }
    } else {
        HashMap::new()
    };

    let mut jobs = Vec::new();
    for label in [Label::NoSyncope, Label::Syncope] {
        let sub = dir.join(label.as_str());
        if sub.is_dir() {
            for path in csv_files(&sub)? {
                jobs.push((path, label));
            }
        }
    }

    let parsed: Vec<(PathBuf, Result<RawRecording>)> = jobs
        .into_par_iter()
        .map(|(path, label)| {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let id = format!("{}/{}", label.as_str(), stem);
            let result = read_recording(&path, id, label).and_then(|mut rec| {
                rec.validate_rate(rate_hz)?;
                let entry = manifest.get(&rec.id).or_else(|| manifest.get(&stem));
                if let Some(entry) = entry {
                    if let Some(marker) = entry.marker_s {
                        let (start, end) = rec.time_span().unwrap_or((0.0, 0.0));
                        if marker < start || marker > end {
                            return Err(parse_err(
                                &path,
                                0,
                                format!("marker {marker} s outside recording span"),
                            ));
                        }
                        rec.marker_time = Some(marker);
                    }
                }
                Ok(rec)
            });
            (path, result)
        })
        .collect();

    let mut records = Vec::new();
    for (path, result) in parsed {
        match result {
            Ok(rec) => records.push(rec),
            Err(e) => issues.push(ScanIssue {
                path,
                message: e.to_string(),
            }),
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut catalog = DatasetCatalog::from_records(records, rate_hz);
    catalog.issues = issues;
    Ok(catalog)
}

/// Finds recordings with identical sample values but different labels and
/// stores them in `catalog.conflicts`. Pairs are ordered `(a, b)` with
/// `a < b` and sorted.
pub fn find_conflicts(catalog: &mut DatasetCatalog) -> Vec<(String, String)> {
    let mut groups: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    for (i, rec) in catalog.records.iter().enumerate() {
        let mut key = Vec::with_capacity(rec.mbp.len() + rec.hr.len() + 1);
        key.push(rec.mbp.len() as u64);
        // +0.0 and -0.0 compare equal, so normalise the sign of zero.
        key.extend(rec.mbp.iter().chain(&rec.hr).map(|s| (s.value + 0.0).to_bits()));
        groups.entry(key).or_default().push(i);
    }
    let mut pairs = Vec::new();
    for members in groups.values() {
        for (k, &i) in members.iter().enumerate() {
            for &j in &members[k + 1..] {
                let (a, b) = (&catalog.records[i], &catalog.records[j]);
                if a.label != b.label && a.identical_content(b) {
                    let pair = if a.id <= b.id {
                        (a.id.clone(), b.id.clone())
                    } else {
                        (b.id.clone(), a.id.clone())
                    };
                    pairs.push(pair);
                }
            }
        }
    }
    pairs.sort();
    catalog.conflicts = pairs.clone();
    pairs
}
