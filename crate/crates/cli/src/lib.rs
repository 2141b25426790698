// SPDX-License-Identifier: MIT OR Apache-2.0

//! `sentinel` command-line front end: argument parsing, configuration
//! merging, run directories and provenance records.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::{absolute, load_space, resolve_seed, CommandKind, RunConfig, Settings};
use sentinel_core::{Error, ErrorClass, Result};

pub const RUN_FILE: &str = "run.json";
pub const LOG_FILE: &str = "run.log";

#[derive(Parser, Debug)]
#[command(name = "sentinel", version, about = "Syncope early-warning pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML configuration file with optional sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_level: Option<String>,
    /// Run directory; every output is written below it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic recording tree.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_syncope: Option<usize>,
        #[arg(long)]
        n_nosyncope: Option<usize>,
        #[arg(long)]
        length_min: Option<usize>,
        #[arg(long)]
        length_max: Option<usize>,
        /// Inject gaps and spikes.
        #[arg(long)]
        corrupt: bool,
    },
    /// Clean, balance and split a recording tree.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Train a classifier on a preprocessed run's train split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Units per layer, comma separated.
        #[arg(long, value_delimiter = ',')]
        units: Option<Vec<usize>>,
        #[arg(long)]
        bidirectional: Option<bool>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr_multiplier: Option<f64>,
        #[arg(long)]
        lr_decay: Option<f64>,
    },
    /// Series-level evaluation at one threshold.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        consecutive: Option<usize>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Evaluation over a grid of thresholds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        consecutive: Option<usize>,
        #[arg(long)]
        split: Option<String>,
    },
    /// Bayesian hyperparameter search on the train split.
    Hpo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        phase: Option<u8>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        n_init: Option<usize>,
        /// TOML file with `[[dims]]` entries replacing the phase's space.
        #[arg(long)]
        space: Option<PathBuf>,
        /// Training epochs per trial.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Render sweep, trial and partial-dependence outputs as HTML/SVG.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directories to collect from.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Re-run a command from its recorded run.json.
    Replay {
        run_json: PathBuf,
        /// Alternative run directory; defaults to the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

fn abs_opt(p: Option<PathBuf>) -> Result<Option<PathBuf>> {
    p.map(|p| absolute(&p)).transpose()
}

/// Merges defaults, the config file and the flags into a [`RunConfig`].
pub fn resolve(command: Command) -> Result<RunConfig> {
    let common = match &command {
        Command::Synth { common, .. }
        | Command::Preprocess { common, .. }
        | Command::Train { common, .. }
        | Command::Evaluate { common, .. }
        | Command::Sweep { common, .. }
        | Command::Hpo { common, .. }
        | Command::Report { common, .. } => common.clone(),
        Command::Replay { .. } => {
            return Err(Error::ConfigInvalid("replay is resolved from its run.json".into()))
        }
    };
    let mut s = match &common.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let seed = resolve_seed(common.seed, &s)?;
    let log_level = common
        .log_level
        .clone()
        .or_else(|| s.general.log_level.clone())
        .unwrap_or_else(|| "info".into());
    let out = common
        .out
        .clone()
        .ok_or_else(|| Error::ConfigInvalid("no run directory given (--out)".into()))?;
    let mut data = None;
    let mut model = None;
    let mut inputs = Vec::new();
    let mut space = None;
    let kind = match command {
        Command::Synth {
            n_syncope,
            n_nosyncope,
            length_min,
            length_max,
            corrupt,
            ..
        } => {
            set(&mut s.synth.n_syncope, n_syncope);
            set(&mut s.synth.n_nosyncope, n_nosyncope);
            set(&mut s.synth.length_min, length_min);
            set(&mut s.synth.length_max, length_max);
            s.synth.corrupt |= corrupt;
            CommandKind::Synth
        }
        Command::Preprocess {
            data: d,
            train_fraction,
            ..
        } => {
            data = d;
            set(&mut s.preprocess.train_fraction, train_fraction);
            CommandKind::Preprocess
        }
        Command::Train {
            data: d,
            units,
            bidirectional,
            window,
            stride,
            horizon,
            batch,
            epochs,
            lr_multiplier,
            lr_decay,
            ..
        } => {
            data = d;
            set(&mut s.model.units, units);
            set(&mut s.model.bidirectional, bidirectional);
            set(&mut s.train.window, window);
            set(&mut s.train.stride, stride);
            set(&mut s.train.horizon, horizon);
            set(&mut s.train.batch, batch);
            set(&mut s.train.epochs, epochs);
            set(&mut s.train.lr_multiplier, lr_multiplier);
            set(&mut s.train.lr_decay, lr_decay);
            CommandKind::Train
        }
        Command::Evaluate {
            model: m,
            data: d,
            threshold,
            consecutive,
            split,
            ..
        } => {
            data = d;
            model = m;
            set(&mut s.eval.threshold, threshold);
            set(&mut s.eval.consecutive, consecutive);
            set(&mut s.eval.split, split);
            CommandKind::Evaluate
        }
        Command::Sweep {
            model: m,
            data: d,
            thresholds,
            consecutive,
            split,
            ..
        } => {
            data = d;
            model = m;
            set(&mut s.eval.thresholds, thresholds);
            set(&mut s.eval.consecutive, consecutive);
            set(&mut s.eval.split, split);
            CommandKind::Sweep
        }
        Command::Hpo {
            data: d,
            phase,
            budget,
            n_init,
            space: sp,
            epochs,
            ..
        } => {
            data = d;
            set(&mut s.hpo.phase, phase);
            set(&mut s.hpo.budget, budget);
            set(&mut s.hpo.n_init, n_init);
            if epochs.is_some() {
                s.hpo.epochs = epochs;
            }
            space = sp.map(|p| load_space(&p)).transpose()?;
            CommandKind::Hpo
        }
        Command::Report { inputs: i, .. } => {
            inputs = i.iter().map(|p| absolute(p)).collect::<Result<_>>()?;
            CommandKind::Report
        }
        Command::Replay { .. } => unreachable!("handled above"),
    };
    s.general.seed = Some(seed);
    s.general.log_level = Some(log_level.clone());
    Ok(RunConfig {
        command: kind,
        seed,
        log_level,
        out: absolute(&out)?,
        data: abs_opt(data)?,
        model: abs_opt(model)?,
        inputs,
        space,
        settings: s,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix_s: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Versions {
    pub sentinel: String,
    pub checkpoint: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub class: String,
    pub message: String,
    pub exit_code: i32,
}

/// Provenance written to `run.json` in every run directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: CommandKind,
    pub seed: u64,
    pub config: RunConfig,
    pub timings: Timings,
    pub versions: Versions,
    pub outputs: Vec<String>,
    pub replayed_from: Option<PathBuf>,
    pub error: Option<ErrorRecord>,
}

pub fn read_run_record(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn class_name(e: &Error) -> &'static str {
    match e.class() {
        ErrorClass::Config => "config",
        ErrorClass::Data => "data",
        ErrorClass::Numeric => "numeric",
    }
}

/// Writes log lines to stderr and to the run log.
#[derive(Clone)]
struct Tee(Arc<Mutex<Option<fs::File>>>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stderr().write_all(buf)?;
        if let Some(f) = self.0.lock().expect("log sink").as_mut() {
            f.write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        if let Some(f) = self.0.lock().expect("log sink").as_mut() {
            f.flush()?;
        }
        std::io::stderr().flush()
    }
}

fn init_logging(level: &str, sink: Tee) {
    let filter = level.parse().unwrap_or(log::LevelFilter::Info);
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp_millis()
        .target(env_logger::Target::Pipe(Box::new(sink)))
        .try_init();
}

fn list_outputs(dir: &Path) -> Vec<String> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) {
        let Ok(entries) = fs::read_dir(dir) else { return };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if let Ok(rel) = p.strip_prefix(root) {
                let rel = rel.to_string_lossy().replace('\\', "/");
                if rel != RUN_FILE && rel != LOG_FILE {
                    out.push(rel);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// Executes a resolved run and writes its `run.json`.
pub fn execute(rc: RunConfig, replayed_from: Option<PathBuf>) -> Result<RunRecord> {
    fs::create_dir_all(&rc.out)?;
    let sink = Tee(Arc::new(Mutex::new(Some(fs::File::create(rc.out.join(LOG_FILE))?))));
    init_logging(&rc.log_level, sink);
    log::info!("sentinel {} {}", env!("CARGO_PKG_VERSION"), rc.command.name());
    log::info!(
        "config {}",
        serde_json::to_string_pretty(&rc).map_err(|e| Error::ConfigInvalid(e.to_string()))?
    );
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let clock = Instant::now();
    let result = commands::dispatch(&rc);
    let error = result.as_ref().err().map(|e| ErrorRecord {
        class: class_name(e).into(),
        message: e.to_string(),
        exit_code: exit_code(e),
    });
    let record = RunRecord {
        command: rc.command,
        seed: rc.seed,
        timings: Timings {
            started_unix_s: started,
            elapsed_s: clock.elapsed().as_secs_f64(),
        },
        versions: Versions {
            sentinel: env!("CARGO_PKG_VERSION").into(),
            checkpoint: sentinel_core::train::CHECKPOINT_VERSION,
        },
        outputs: list_outputs(&rc.out),
        replayed_from,
        error,
        config: rc,
    };
    let text = serde_json::to_string_pretty(&record).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    fs::write(record.config.out.join(RUN_FILE), text + "\n")?;
    result.map(|()| {
        log::info!("done in {:.2} s", record.timings.elapsed_s);
        record
    })
}

pub fn replay(run_json: &Path, out: Option<PathBuf>) -> Result<RunRecord> {
    let record = read_run_record(run_json)?;
    let mut rc = record.config;
    if let Some(o) = out {
        rc.out = absolute(&o)?;
    }
    execute(rc, Some(absolute(run_json)?))
}

fn run(cli: Cli) -> Result<RunRecord> {
    match cli.command {
        Command::Replay { run_json, out } => replay(&run_json, out),
        other => execute(resolve(other)?, None),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(_) => 0,
        Err(e) => {
            let code = exit_code(&e);
            let rec = ErrorRecord {
                class: class_name(&e).into(),
                message: e.to_string(),
                exit_code: code,
            };
            let json = serde_json::to_string(&serde_json::json!({ "error": rec }))
                .unwrap_or_else(|_| e.to_string());
            eprintln!("{json}");
            code
        }
    }
}
