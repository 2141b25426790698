// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

use crate::nn::GruModel;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{0}: neither mBP nor HR column present")]
    MissingChannel(PathBuf),
    #[error("{path}: timestamps not strictly increasing at line {line}")]
    NonMonotonicTime { path: PathBuf, line: u64 },
    #[error("{path}: timestamp {time_s} s is off the {rate_hz} Hz sampling grid")]
    OffGrid {
        path: PathBuf,
        time_s: f64,
        rate_hz: f64,
    },
    #[error("no parseable recordings found")]
    EmptyDataset,
    #[error("channel {0} has no samples")]
    EmptyChannel(&'static str),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(&'static str),
    #[error("bad median window {window} for signal of length {len}")]
    BadWindow { window: usize, len: usize },
    #[error("too few series: {0}")]
    TooFewSeries(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("series {id} has {len} samples, need at least {needed}")]
    SeriesTooShort { id: String, len: usize, needed: usize },
    #[error("training windows contain no positive examples")]
    NoPositiveWindows,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss {
        epoch: usize,
        last_good: Option<Box<GruModel>>,
    },
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("recall undefined: no positive series")]
    NoPositives,
    #[error("precision undefined: no detections")]
    NoDetections,
    #[error("F-measure undefined: recall and precision both zero")]
    UndefinedF,
    #[error("accuracy undefined: nothing evaluated")]
    EmptyEvaluation,
    #[error("surrogate kernel is not positive definite")]
    DegenerateSurrogate,
    #[error("every optimisation trial failed")]
    AllTrialsFailed,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used by the CLI to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            ConfigInvalid(_) | BadWindow { .. } | VersionMismatch { .. } => ErrorClass::Config,
            NonFiniteLoss { .. }
            | DegenerateSurrogate
            | AllTrialsFailed
            | UndefinedF
            | DimensionMismatch { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
