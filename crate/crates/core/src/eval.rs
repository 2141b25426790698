// SPDX-License-Identifier: MIT OR Apache-2.0

//! Classification metrics, threshold detection over probability traces,
//! series-level reports and threshold sweeps.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::nn::{predict_batch, GruModel};
use crate::preprocess::CleanSeries;

/// Windows scored per forward pass during evaluation.
pub const EVAL_BATCH: usize = 128;

pub fn recall(tp: u64, fn_: u64) -> Result<f64> {
    if tp + fn_ == 0 {
        return Err(Error::NoPositives);
    }
    Ok(tp as f64 / (tp + fn_) as f64)
}

pub fn precision(tp: u64, fp: u64) -> Result<f64> {
    if tp + fp == 0 {
        return Err(Error::NoDetections);
    }
    Ok(tp as f64 / (tp + fp) as f64)
}

pub fn f_measure(recall: f64, precision: f64, beta: f64) -> Result<f64> {
    let b2 = beta * beta;
    let denom = recall + b2 * precision;
    if !(denom > 0.0) {
        return Err(Error::UndefinedF);
    }
    Ok((1.0 + b2) * recall * precision / denom)
}

pub fn accuracy(t: u64, f: u64) -> Result<f64> {
    if t + f == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok(t as f64 / (t + f) as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Syncope, Label::Syncope) => self.tp += 1,
            (Label::NoSyncope, Label::Syncope) => self.fp += 1,
            (Label::Syncope, Label::NoSyncope) => self.fn_ += 1,
            (Label::NoSyncope, Label::NoSyncope) => self.tn += 1,
        }
    }

    pub fn recall(&self) -> Option<f64> {
        recall(self.tp, self.fn_).ok()
    }

    pub fn precision(&self) -> Option<f64> {
        precision(self.tp, self.fp).ok()
    }

    pub fn f_beta(&self, beta: f64) -> Option<f64> {
        f_measure(self.recall()?, self.precision()?, beta).ok()
    }

    pub fn accuracy(&self) -> Option<f64> {
        accuracy(self.tp + self.tn, self.fp + self.fn_).ok()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesOutcome {
    pub id: String,
    pub label: Label,
    pub detection_index: Option<usize>,
    pub reaction_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub consecutive: usize,
    pub beta: f64,
    pub confusion: ConfusionCounts,
    /// Absent when undefined, never defaulted to 0 or 1.
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f_beta: Option<f64>,
    pub accuracy: Option<f64>,
    pub per_series: Vec<SeriesOutcome>,
}

impl EvalReport {
    pub fn detections(&self) -> usize {
        self.per_series.iter().filter(|s| s.detection_index.is_some()).count()
    }

    pub fn median_reaction_seconds(&self) -> Option<f64> {
        let mut r: Vec<f64> = self.per_series.iter().filter_map(|s| s.reaction_seconds).collect();
        median(&mut r)
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Anything that maps a series to per-window syncope probabilities at stride 1.
pub trait WindowScorer: Sync {
    fn window_size(&self) -> usize;
    /// Entry `k` scores the window ending at sample `k + window_size - 1`.
    fn score(&self, series: &CleanSeries) -> Result<Vec<f64>>;
}

impl WindowScorer for GruModel {
    fn window_size(&self) -> usize {
        self.spec.window_size
    }

    fn score(&self, series: &CleanSeries) -> Result<Vec<f64>> {
        probability_trace(self, series)
    }
}

fn check_length(series: &CleanSeries, window: usize) -> Result<usize> {
    if series.len() < window {
        return Err(Error::SeriesTooShort {
            id: series.id.clone(),
            len: series.len(),
            needed: window,
        });
    }
    Ok(series.len() - window + 1)
}

/// P(syncope) for every stride-1 window of `series`.
pub fn probability_trace(model: &GruModel, series: &CleanSeries) -> Result<Vec<f64>> {
    let window = model.spec.window_size;
    let n = check_length(series, window)?;
    let mut trace = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let b = EVAL_BATCH.min(n - start);
        let inputs = Array3::from_shape_fn((window, b, 2), |(t, j, c)| {
            let i = start + j + t;
            if c == 0 {
                series.mbp[i]
            } else {
                series.hr[i]
            }
        });
        let probs = predict_batch(model, inputs.view())?;
        trace.extend(probs.column(1).iter().copied());
        start += b;
    }
    Ok(trace)
}

/// Index of the first window that starts a run of `consecutive` windows at
/// or above `threshold`.
pub fn first_detection(trace: &[f64], threshold: f64, consecutive: usize) -> Option<usize> {
    let need = consecutive.max(1);
    let mut run = 0;
    for (k, &p) in trace.iter().enumerate() {
        if p >= threshold {
            run += 1;
            if run == need {
                return Some(k + 1 - need);
            }
        } else {
            run = 0;
        }
    }
    None
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::ConfigInvalid(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(())
}

/// Sample index of the detection, i.e. the end of the first window of the run.
pub fn detect_series(
    scorer: &impl WindowScorer,
    series: &CleanSeries,
    threshold: f64,
    consecutive: usize,
) -> Result<Option<usize>> {
    check_threshold(threshold)?;
    check_length(series, scorer.window_size())?;
    let trace = scorer.score(series)?;
    Ok(first_detection(&trace, threshold, consecutive).map(|k| k + scorer.window_size() - 1))
}

/// Builds a report from precomputed traces.
pub fn report_from_traces(
    series: &[CleanSeries],
    traces: &[Vec<f64>],
    window_size: usize,
    threshold: f64,
    consecutive: usize,
    beta: f64,
) -> Result<EvalReport> {
    check_threshold(threshold)?;
    if series.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if series.len() != traces.len() {
        return Err(Error::DimensionMismatch {
            expected: series.len(),
            actual: traces.len(),
        });
    }
    let mut confusion = ConfusionCounts::default();
    let mut per_series = Vec::with_capacity(series.len());
    for (s, trace) in series.iter().zip(traces) {
        let detection_index =
            first_detection(trace, threshold, consecutive).map(|k| k + window_size - 1);
        let predicted = if detection_index.is_some() {
            Label::Syncope
        } else {
            Label::NoSyncope
        };
        confusion.add(s.label, predicted);
        let reaction_seconds = match (s.label, s.marker_index, detection_index) {
            (Label::Syncope, Some(m), Some(d)) => Some((m as f64 - d as f64) / s.rate_hz),
            _ => None,
        };
        per_series.push(SeriesOutcome {
            id: s.id.clone(),
            label: s.label,
            detection_index,
            reaction_seconds,
        });
    }
    Ok(EvalReport {
        threshold,
        consecutive,
        beta,
        recall: confusion.recall(),
        precision: confusion.precision(),
        f_beta: confusion.f_beta(beta),
        accuracy: confusion.accuracy(),
        confusion,
        per_series,
    })
}

pub fn score_all(scorer: &impl WindowScorer, series: &[CleanSeries]) -> Result<Vec<Vec<f64>>> {
    series.par_iter().map(|s| scorer.score(s)).collect()
}

pub fn evaluate_dataset(
    scorer: &impl WindowScorer,
    series: &[CleanSeries],
    threshold: f64,
    consecutive: usize,
) -> Result<EvalReport> {
    check_threshold(threshold)?;
    if series.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let traces = score_all(scorer, series)?;
    report_from_traces(series, &traces, scorer.window_size(), threshold, consecutive, 1.0)
}

/// `0.05, 0.10, ..., 0.95`.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..=19).map(|i| (i * 5) as f64 / 100.0).collect()
}

pub fn sweep_traces(
    series: &[CleanSeries],
    traces: &[Vec<f64>],
    window_size: usize,
    thresholds: &[f64],
    consecutive: usize,
) -> Result<Vec<EvalReport>> {
    if thresholds.is_empty() || thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::ConfigInvalid("thresholds must be non-empty and ascending".into()));
    }
    thresholds
        .iter()
        .map(|&t| report_from_traces(series, traces, window_size, t, consecutive, 1.0))
        .collect()
}

/// Scores each series once and evaluates every threshold on the same traces.
pub fn threshold_sweep(
    scorer: &impl WindowScorer,
    series: &[CleanSeries],
    thresholds: &[f64],
    consecutive: usize,
) -> Result<Vec<EvalReport>> {
    if series.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    thresholds.iter().try_for_each(|&t| check_threshold(t))?;
    let traces = score_all(scorer, series)?;
    sweep_traces(series, &traces, scorer.window_size(), thresholds, consecutive)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub median_reaction_s: Option<f64>,
}

pub fn curve(reports: &[EvalReport]) -> Vec<CurvePoint> {
    reports
        .iter()
        .map(|r| CurvePoint {
            threshold: r.threshold,
            recall: r.recall,
            precision: r.precision,
            f1: r.confusion.f_beta(1.0),
            accuracy: r.accuracy,
            median_reaction_s: r.median_reaction_seconds(),
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_curve_csv(points: &[CurvePoint], path: &Path) -> Result<()> {
    let mut out = String::from("threshold,recall,precision,f1,accuracy,median_reaction_s\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.threshold,
            opt(p.recall),
            opt(p.precision),
            opt(p.f1),
            opt(p.accuracy),
            opt(p.median_reaction_s)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let text = fs::read_to_string(path)?;
    let parse = |s: &str, line: u64| -> Result<Option<f64>> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("bad number {s:?}"),
        })
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message: "expected 6 columns".into(),
            });
        }
        out.push(CurvePoint {
            threshold: parse(f[0], i as u64 + 1)?.unwrap_or(f64::NAN),
            recall: parse(f[1], i as u64 + 1)?,
            precision: parse(f[2], i as u64 + 1)?,
            f1: parse(f[3], i as u64 + 1)?,
            accuracy: parse(f[4], i as u64 + 1)?,
            median_reaction_s: parse(f[5], i as u64 + 1)?,
        });
    }
    Ok(out)
}

pub fn write_report_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::from("series_id,label,detected,detection_index,reaction_s\n");
    for s in &report.per_series {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.id,
            s.label.as_str(),
            s.detection_index.is_some(),
            s.detection_index.map(|d| d.to_string()).unwrap_or_default(),
            opt(s.reaction_seconds)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    threshold: f64,
    consecutive: usize,
    beta: f64,
    confusion: &'a ConfusionCounts,
    recall: Option<f64>,
    precision: Option<f64>,
    f_beta: Option<f64>,
    accuracy: Option<f64>,
    median_reaction_s: Option<f64>,
}

pub fn write_report_json(report: &EvalReport, path: &Path) -> Result<()> {
    let summary = Summary {
        threshold: report.threshold,
        consecutive: report.consecutive,
        beta: report.beta,
        confusion: &report.confusion,
        recall: report.recall,
        precision: report.precision,
        f_beta: report.f_beta,
        accuracy: report.accuracy,
        median_reaction_s: report.median_reaction_seconds(),
    };
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::NormParams;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn metric_examples() {
        assert_eq!(recall(3, 1).unwrap(), 0.75);
        assert_eq!(recall(5, 0).unwrap(), 1.0);
        assert!(close(recall(19, 2).unwrap(), 0.904762, 1e-6));
        assert!(matches!(recall(0, 0), Err(Error::NoPositives)));
        assert_eq!(precision(3, 3).unwrap(), 0.5);
        assert_eq!(precision(4, 0).unwrap(), 1.0);
        assert!(close(precision(17, 4).unwrap(), 0.809524, 1e-6));
        assert!(matches!(precision(0, 0), Err(Error::NoDetections)));
        assert!(close(f_measure(0.75, 0.5, 1.0).unwrap(), 0.6, 1e-15));
        assert!(close(f_measure(1.0, 0.5, 2.0).unwrap(), 2.5 / 3.0, 1e-15));
        assert!(close(f_measure(0.3, 0.3, 1.0).unwrap(), 0.3, 1e-15));
        assert!(matches!(f_measure(0.0, 0.0, 1.0), Err(Error::UndefinedF)));
        assert!(close(accuracy(34, 4).unwrap(), 0.895, 5e-4));
        assert_eq!(accuracy(7, 0).unwrap(), 1.0);
        assert!(close(accuracy(25, 13).unwrap(), 0.6579, 1e-4));
        assert!(matches!(accuracy(0, 0), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn detection_runs() {
        let trace = [0.2, 0.2, 0.9, 0.6, 0.9, 0.9];
        assert_eq!(first_detection(&trace, 0.8, 2), Some(4));
        assert_eq!(first_detection(&trace, 0.8, 1), Some(2));
        assert_eq!(first_detection(&trace, 0.8, 3), None);
        assert_eq!(first_detection(&[], 0.5, 1), None);
    }

    struct Constant(f64, usize);

    impl WindowScorer for Constant {
        fn window_size(&self) -> usize {
            self.1
        }
        fn score(&self, s: &CleanSeries) -> Result<Vec<f64>> {
            Ok(vec![self.0; check_length(s, self.1)?])
        }
    }

    /// Fires with probability 0.9 from `fire_at` onwards.
    struct Step {
        fire_at: Option<usize>,
    }

    impl WindowScorer for Step {
        fn window_size(&self) -> usize {
            10
        }
        fn score(&self, s: &CleanSeries) -> Result<Vec<f64>> {
            let n = check_length(s, 10)?;
            let fire = if s.label == Label::Syncope { self.fire_at } else { None };
            Ok((0..n)
                .map(|k| if fire.is_some_and(|f| k + 9 >= f) { 0.9 } else { 0.1 })
                .collect())
        }
    }

    fn series(id: &str, label: Label, len: usize, marker: Option<usize>) -> CleanSeries {
        CleanSeries {
            id: id.into(),
            label,
            mbp: vec![0.0; len],
            hr: vec![0.0; len],
            marker_index: marker,
            rate_hz: 1.25,
            norm_params: NormParams { mbp: (0.0, 1.0), hr: (0.0, 1.0) },
        }
    }

    fn balanced(n: usize, len: usize, marker: usize) -> Vec<CleanSeries> {
        (0..n)
            .map(|i| series(&format!("s{i}"), Label::Syncope, len, Some(marker)))
            .chain((0..n).map(|i| series(&format!("n{i}"), Label::NoSyncope, len, None)))
            .collect()
    }

    #[test]
    fn constant_scorer_detection() {
        let s = series("a", Label::Syncope, 50, Some(40));
        assert_eq!(detect_series(&Constant(0.8, 10), &s, 0.7, 1).unwrap(), Some(9));
        assert_eq!(detect_series(&Constant(0.8, 10), &s, 0.85, 1).unwrap(), None);
        let short = series("b", Label::Syncope, 9, None);
        assert!(matches!(
            detect_series(&Constant(0.8, 10), &short, 0.7, 1),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn perfect_and_silent_detectors() {
        let set = balanced(4, 2100, 2000);
        let r = evaluate_dataset(&Step { fire_at: Some(1250) }, &set, 0.7, 1).unwrap();
        assert_eq!(r.confusion, ConfusionCounts { tp: 4, fp: 0, fn_: 0, tn: 4 });
        assert_eq!((r.recall, r.precision, r.accuracy), (Some(1.0), Some(1.0), Some(1.0)));
        for s in r.per_series.iter().filter(|s| s.label == Label::Syncope) {
            assert_eq!(s.detection_index, Some(1250));
            assert_eq!(s.reaction_seconds, Some(600.0));
        }
        let r = evaluate_dataset(&Step { fire_at: None }, &set, 0.7, 1).unwrap();
        assert_eq!(r.confusion.fn_, 4);
        assert_eq!(r.recall, Some(0.0));
        assert_eq!(r.precision, None);
        assert_eq!(r.f_beta, None);
        assert_eq!(r.accuracy, Some(0.5));
    }

    #[test]
    fn late_detection_is_negative_reaction() {
        let set = vec![series("a", Label::Syncope, 300, Some(100))];
        let r = evaluate_dataset(&Step { fire_at: Some(150) }, &set, 0.5, 1).unwrap();
        assert_eq!(r.per_series[0].reaction_seconds, Some(-40.0));
    }

    #[test]
    fn sweep_grid_and_consistency() {
        let grid = default_threshold_grid();
        assert_eq!(grid.len(), 19);
        assert_eq!(grid[0], 0.05);
        assert_eq!(grid[18], 0.95);
        let set = balanced(3, 200, 150);
        let scorer = Step { fire_at: Some(100) };
        let sweep = threshold_sweep(&scorer, &set, &[0.7], 1).unwrap();
        assert_eq!(sweep[0], evaluate_dataset(&scorer, &set, 0.7, 1).unwrap());
        assert_eq!(curve(&threshold_sweep(&scorer, &set, &grid, 1).unwrap()).len(), 19);
        assert!(threshold_sweep(&scorer, &set, &[0.5, 0.4], 1).is_err());
        assert!(evaluate_dataset(&scorer, &[], 0.5, 1).is_err());
        assert!(evaluate_dataset(&scorer, &set, 1.0, 1).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = balanced(2, 200, 150);
        let reports =
            threshold_sweep(&Step { fire_at: Some(100) }, &set, &default_threshold_grid(), 1)
                .unwrap();
        let pts = curve(&reports);
        let p = dir.path().join("curve.csv");
        write_curve_csv(&pts, &p).unwrap();
        assert_eq!(read_curve_csv(&p).unwrap(), pts);
        let rp = dir.path().join("report.csv");
        write_report_csv(&reports[9], &rp).unwrap();
        let text = fs::read_to_string(&rp).unwrap();
        assert!(text.starts_with("series_id,label,detected,detection_index,reaction_s\n"));
        assert!(text.contains("s0,syncope,true,100,40\n"));
        assert!(text.contains("n0,nosyncope,false,,\n"));
        let jp = dir.path().join("report.json");
        write_report_json(&reports[9], &jp).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&jp).unwrap()).unwrap();
        assert_eq!(v["confusion"]["fn"], 0);
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&mut []), None);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    proptest! {
        #[test]
        fn f1_between_recall_and_precision(tp in 0u64..20, fp in 0u64..20, fn_ in 0u64..20) {
            let c = ConfusionCounts { tp, fp, fn_, tn: 0 };
            if let (Some(r), Some(p), Some(f)) = (c.recall(), c.precision(), c.f_beta(1.0)) {
                prop_assert!(f <= r.max(p) + 1e-15);
                prop_assert!(f >= r.min(p) - 1e-15);
            }
        }

        #[test]
        fn detection_monotone_in_threshold(
            trace in proptest::collection::vec(0.0f64..1.0, 0..60),
            consecutive in 1usize..4,
        ) {
            let grid = default_threshold_grid();
            let mut prev = true;
            for &t in &grid {
                let hit = first_detection(&trace, t, consecutive).is_some();
                prop_assert!(prev || !hit);
                prev = hit;
            }
        }
    }
}
