// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use sentinel_core::data::{find_conflicts, scan_dataset};
use sentinel_core::eval::{
    curve, evaluate_dataset, threshold_sweep, write_curve_csv, write_report_csv, write_report_json,
};
use sentinel_core::hpo::{
    partial_dependence, run_phase_logged, validation_error, write_trials_csv, HpoParams, HpoTrial,
    SearchSpace, TrialStatus,
};
use sentinel_core::preprocess::{preprocess_pipeline, read_series_dir, write_split};
use sentinel_core::synth::generate_dataset;
use sentinel_core::train::{fit_series, load_checkpoint, save_checkpoint, write_loss_trace};
use sentinel_core::{CleanSeries, Error, Result};

use crate::config::{CommandKind, RunConfig};
use crate::report;

pub const MODEL_FILE: &str = "model.ckpt";

pub fn dispatch(rc: &RunConfig) -> Result<()> {
    match rc.command {
        CommandKind::Synth => synth(rc),
        CommandKind::Preprocess => preprocess(rc),
        CommandKind::Train => train(rc),
        CommandKind::Evaluate => evaluate(rc),
        CommandKind::Sweep => sweep(rc),
        CommandKind::Hpo => hpo(rc),
        CommandKind::Report => report::render(&rc.inputs, &rc.out),
    }
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::ConfigInvalid(format!("{what} path is required ({flag})")))
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn synth(rc: &RunConfig) -> Result<()> {
    let cfg = rc.settings.synth.to_config(rc.seed);
    let summary = generate_dataset(&cfg, &rc.out)?;
    log::info!(
        "wrote {} recordings ({} syncope, {} no-syncope), {} spikes, {} gap samples",
        summary.files,
        summary.syncope,
        summary.nosyncope,
        summary.spikes,
        summary.gap_samples
    );
    Ok(())
}

fn preprocess(rc: &RunConfig) -> Result<()> {
    let data = require(&rc.data, "dataset", "--data")?;
    let cfg = rc.settings.preprocess.to_config();
    let mut catalog = scan_dataset(data, cfg.rate_hz)?;
    for issue in &catalog.issues {
        log::warn!("skipped {}: {}", issue.path.display(), issue.message);
    }
    let conflicts = find_conflicts(&mut catalog);
    if !conflicts.is_empty() {
        log::warn!("{} conflicting recording pairs excluded", conflicts.len());
    }
    log::info!(
        "catalog: {} syncope, {} no-syncope",
        catalog.counts.syncope,
        catalog.counts.nosyncope
    );
    let out = preprocess_pipeline(&catalog, &cfg, rc.seed)?;
    for (stage, n) in out.report.counts() {
        log::info!("dropped at {stage:?}: {n}");
    }
    log::info!(
        "split: {} train, {} test",
        out.split.train.len(),
        out.split.test.len()
    );
    write_split(&out.split, &rc.out)?;
    write_json(&out.report, &rc.out.join("drop_report.json"))
}

fn load_split(rc: &RunConfig, split: &str) -> Result<Vec<CleanSeries>> {
    let data = require(&rc.data, "preprocessed data", "--data")?;
    if split != "train" && split != "test" {
        return Err(Error::ConfigInvalid(format!("split must be train or test, got {split}")));
    }
    let series = read_series_dir(&data.join(split))?;
    if series.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(series)
}

fn train(rc: &RunConfig) -> Result<()> {
    let series = load_split(rc, "train")?;
    let spec = rc.settings.model_spec();
    let cfg = rc.settings.train.to_config(rc.seed);
    log::info!("training on {} series", series.len());
    let outcome = fit_series(&series, &spec, &cfg, |e, l| log::info!("epoch {e} loss {l:.6}"));
    match outcome {
        Ok(o) => {
            log::info!("{} windows, {} positive", o.windows, o.positive_windows);
            save_checkpoint(&o.model, &rc.out.join(MODEL_FILE))?;
            write_loss_trace(&o.loss_trace, &rc.out.join("loss.csv"))
        }
        Err(Error::NonFiniteLoss { epoch, last_good }) => {
            if let Some(m) = &last_good {
                save_checkpoint(m, &rc.out.join("last_good.ckpt"))?;
            }
            Err(Error::NonFiniteLoss { epoch, last_good })
        }
        Err(e) => Err(e),
    }
}

fn evaluate(rc: &RunConfig) -> Result<()> {
    let model = load_checkpoint(require(&rc.model, "model", "--model")?)?;
    let e = &rc.settings.eval;
    let series = load_split(rc, &e.split)?;
    let report = evaluate_dataset(&model, &series, e.threshold, e.consecutive)?;
    log::info!(
        "threshold {}: {:?} accuracy {:?} recall {:?} precision {:?}",
        report.threshold,
        report.confusion,
        report.accuracy,
        report.recall,
        report.precision
    );
    write_report_csv(&report, &rc.out.join("report.csv"))?;
    write_report_json(&report, &rc.out.join("report.json"))
}

fn sweep(rc: &RunConfig) -> Result<()> {
    let model = load_checkpoint(require(&rc.model, "model", "--model")?)?;
    let e = &rc.settings.eval;
    let series = load_split(rc, &e.split)?;
    let reports = threshold_sweep(&model, &series, &e.thresholds, e.consecutive)?;
    let points = curve(&reports);
    for p in &points {
        log::info!(
            "threshold {}: accuracy {:?} recall {:?} precision {:?}",
            p.threshold,
            p.accuracy,
            p.recall,
            p.precision
        );
    }
    write_curve_csv(&points, &rc.out.join("curve.csv"))?;
    write_json(&reports, &rc.out.join("sweep.json"))
}

#[derive(Serialize)]
struct HpoSummary<'a> {
    phase: u8,
    space: &'a SearchSpace,
    best: &'a HpoTrial,
    best_params: HpoParams,
    failed: usize,
}

fn hpo(rc: &RunConfig) -> Result<()> {
    let h = &rc.settings.hpo;
    let series = load_split(rc, "train")?;
    let space = match &rc.space {
        Some(s) => s.clone(),
        None => SearchSpace::for_phase(h.phase)?,
    };
    let base = rc.settings.hpo_base();
    let mut train_cfg = rc.settings.train.to_config(rc.seed);
    if let Some(e) = h.epochs {
        train_cfg.epochs = e;
    }
    let bidirectional = rc.settings.model.bidirectional;
    let outcome = run_phase_logged(
        &space,
        h.budget,
        h.n_init,
        rc.seed,
        |x| {
            let params = HpoParams::from_point(&space, x, &base)?;
            validation_error(&series, &params, &train_cfg, bidirectional)
        },
        |t| {
            log::info!(
                "trial {} {:?} objective {} {:?}",
                t.index,
                t.params,
                t.objective,
                t.status
            );
            if let Some(m) = &t.message {
                log::warn!("trial {} failed: {m}", t.index);
            }
        },
    )?;
    write_trials_csv(&space, &outcome.trials, &rc.out.join("trials.csv"))?;
    let done = outcome.trials.iter().filter(|t| t.status == TrialStatus::Done).count();
    let summary = HpoSummary {
        phase: h.phase,
        space: &space,
        best: &outcome.best,
        best_params: HpoParams::from_point(&space, &outcome.best.params, &base)?,
        failed: outcome.trials.len() - done,
    };
    write_json(&summary, &rc.out.join("hpo.json"))?;
    if done >= 2 {
        let dims: Vec<usize> = (0..space.len().min(3)).collect();
        let mut groups: Vec<Vec<usize>> = dims.iter().map(|&d| vec![d]).collect();
        for (i, &a) in dims.iter().enumerate() {
            for &b in &dims[i + 1..] {
                groups.push(vec![a, b]);
            }
        }
        for g in groups {
            let pd = partial_dependence(&outcome.surrogate, &space, &outcome.trials, &g, h.pd_grid)?;
            pd.write_csv(&rc.out.join(format!("pd_{}.csv", pd.dims.join("__"))))?;
        }
    } else {
        log::warn!("fewer than two completed trials; no partial dependence written");
    }
    Ok(())
}
