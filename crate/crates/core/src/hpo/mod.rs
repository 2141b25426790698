// SPDX-License-Identifier: MIT OR Apache-2.0

//! Bayesian hyperparameter search: quasi-random start, GP surrogate,
//! expected-improvement acquisition and partial-dependence export.

mod gp;
mod objective;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::Normal;

use crate::error::{Error, Result};

pub use gp::{expected_improvement, KernelParams, Surrogate, JITTER, MAX_JITTER};
pub use objective::{validation_error, HpoParams};

pub const N_INIT: usize = 8;
pub const N_CANDIDATES: usize = 1024;
/// Spread of the local candidates around the incumbent, in unit-cube units.
const LOCAL_SPREAD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DimKind {
    Integer,
    Real,
    LogReal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimension {
    pub name: String,
    pub kind: DimKind,
    pub lower: f64,
    pub upper: f64,
}

impl Dimension {
    pub fn new(name: &str, kind: DimKind, lower: f64, upper: f64) -> Self {
        Dimension {
            name: name.into(),
            kind,
            lower,
            upper,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.lower < self.upper
            && self.lower.is_finite()
            && self.upper.is_finite()
            && match self.kind {
                DimKind::Integer => self.lower.fract() == 0.0 && self.upper.fract() == 0.0,
                DimKind::LogReal => self.lower > 0.0,
                DimKind::Real => true,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("invalid bounds for dimension {}", self.name)))
        }
    }

    /// Maps a unit-interval coordinate to the dimension's value.
    pub fn from_unit(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.kind {
            DimKind::Real => self.lower + u * (self.upper - self.lower),
            DimKind::Integer => (self.lower + u * (self.upper - self.lower))
                .round()
                .clamp(self.lower, self.upper),
            DimKind::LogReal => {
                (self.lower.ln() + u * (self.upper.ln() - self.lower.ln())).exp().clamp(self.lower, self.upper)
            }
        }
    }

    pub fn to_unit(&self, x: f64) -> f64 {
        let u = match self.kind {
            DimKind::Real | DimKind::Integer => (x - self.lower) / (self.upper - self.lower),
            DimKind::LogReal => (x.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln()),
        };
        u.clamp(0.0, 1.0)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper && (self.kind != DimKind::Integer || x.fract() == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::ConfigInvalid("search space has no dimensions".into()));
        }
        dims.iter().try_for_each(Dimension::validate)?;
        Ok(SearchSpace { dims })
    }

    /// All seven dimensions with their default bounds.
    pub fn phase1() -> Self {
        use DimKind::*;
        SearchSpace {
            dims: vec![
                Dimension::new("gru_units", Integer, 32.0, 256.0),
                Dimension::new("gru_layers", Integer, 1.0, 3.0),
                Dimension::new("window_size", Integer, 50.0, 500.0),
                Dimension::new("batch_size", Integer, 8.0, 64.0),
                Dimension::new("learning_rate", LogReal, 1e-3, 1.0),
                Dimension::new("lr_decay", Real, 0.8, 1.0),
                Dimension::new("output_threshold", Real, 0.3, 0.9),
            ],
        }
    }

    /// Units, layers and window only.
    pub fn phase2() -> Self {
        SearchSpace {
            dims: Self::phase1().dims.into_iter().take(3).collect(),
        }
    }

    pub fn for_phase(phase: u8) -> Result<Self> {
        match phase {
            1 => Ok(Self::phase1()),
            2 => Ok(Self::phase2()),
            p => Err(Error::ConfigInvalid(format!("unknown phase {p}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.dims.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(u).map(|(d, &v)| d.from_unit(v)).collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(x).map(|(d, &v)| d.to_unit(v)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.len() && self.dims.iter().zip(x).all(|(d, &v)| d.contains(v))
    }
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = f64::from(base);
    let (mut inv, mut f) = (0.0, 1.0 / b);
    while i > 0 {
        inv += f * (i % u64::from(base)) as f64;
        i /= u64::from(base);
        f /= b;
    }
    inv
}

/// `index`-th Halton point (skipping the origin), shifted modulo 1 by a
/// seeded offset per dimension.
pub fn halton_point(index: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim)
        .map(|d| {
            let shift: f64 = rng.gen();
            (radical_inverse(index as u64 + 1, PRIMES[d % PRIMES.len()]) + shift).fract()
        })
        .collect()
}

/// Next point to evaluate, in the space's natural units.
///
/// The first [`N_INIT`] calls return quasi-random points. Afterwards the
/// point maximizing expected improvement among [`N_CANDIDATES`] seeded
/// candidates is returned, half drawn uniformly and half around the incumbent.
pub fn suggest_next(surrogate: &Surrogate, space: &SearchSpace, seed: u64) -> Result<Vec<f64>> {
    suggest_with(surrogate, space, seed, N_INIT)
}

pub fn suggest_with(
    surrogate: &Surrogate,
    space: &SearchSpace,
    seed: u64,
    n_init: usize,
) -> Result<Vec<f64>> {
    let n = surrogate.len();
    if n < n_init || n == 0 {
        return Ok(space.from_unit(&halton_point(n, space.len(), seed)));
    }
    let (best_idx, best_y) = surrogate.best().ok_or(Error::DegenerateSurrogate)?;
    let incumbent: Vec<f64> = surrogate
        .observations()
        .nth(best_idx)
        .map(|(x, _)| x.to_vec())
        .ok_or(Error::DegenerateSurrogate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n as u64 + 1);
    let local = Normal::new(0.0, LOCAL_SPREAD).expect("valid spread");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for c in 0..N_CANDIDATES {
        let u: Vec<f64> = if c < N_CANDIDATES / 2 {
            (0..space.len()).map(|_| rng.gen()).collect()
        } else {
            incumbent
                .iter()
                .map(|&v| (v + rand::distributions::Distribution::sample(&local, &mut rng)).clamp(0.0, 1.0))
                .collect()
        };
        let x = space.from_unit(&u);
        let (m, v) = surrogate.posterior(&space.to_unit(&x));
        let ei = expected_improvement(m, v, best_y);
        if !ei.is_finite() {
            return Err(Error::DegenerateSurrogate);
        }
        if best.as_ref().is_none_or(|(b, _)| ei > *b) {
            best = Some((ei, x));
        }
    }
    best.map(|(_, x)| x).ok_or(Error::DegenerateSurrogate)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpoTrial {
    pub index: usize,
    pub params: Vec<f64>,
    /// 1.0 for failed trials.
    pub objective: f64,
    pub status: TrialStatus,
    pub message: Option<String>,
}

#[derive(Clone, Debug)]
pub struct PhaseOutcome {
    pub space: SearchSpace,
    pub trials: Vec<HpoTrial>,
    pub best: HpoTrial,
    pub surrogate: Surrogate,
}

impl PhaseOutcome {
    pub fn best_so_far(&self) -> Vec<f64> {
        best_so_far(&self.trials)
    }
}

pub fn best_so_far(trials: &[HpoTrial]) -> Vec<f64> {
    trials
        .iter()
        .scan(f64::INFINITY, |b, t| {
            *b = b.min(t.objective);
            Some(*b)
        })
        .collect()
}

/// Objective assigned to failed trials.
pub const FAILED_OBJECTIVE: f64 = 1.0;

/// Sequential suggest, evaluate, observe loop.
pub fn run_phase(
    space: &SearchSpace,
    budget: usize,
    n_init: usize,
    seed: u64,
    mut objective: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<PhaseOutcome> {
    run_phase_logged(space, budget, n_init, seed, &mut objective, |_| {})
}

pub fn run_phase_logged(
    space: &SearchSpace,
    budget: usize,
    n_init: usize,
    seed: u64,
    mut objective: impl FnMut(&[f64]) -> Result<f64>,
    mut on_trial: impl FnMut(&HpoTrial),
) -> Result<PhaseOutcome> {
    SearchSpace::new(space.dims.clone())?;
    if n_init == 0 || budget < n_init {
        return Err(Error::ConfigInvalid(format!(
            "budget {budget} must be at least n_init {n_init} (>= 1)"
        )));
    }
    let mut surrogate = Surrogate::new(space.len(), seed);
    let mut trials = Vec::with_capacity(budget);
    for index in 0..budget {
        let params = suggest_with(&surrogate, space, seed, n_init)?;
        let (objective, status, message) = match objective(&params) {
            Ok(v) if v.is_finite() => (v, TrialStatus::Done, None),
            Ok(v) => (FAILED_OBJECTIVE, TrialStatus::Failed, Some(format!("objective {v}"))),
            Err(e) => (FAILED_OBJECTIVE, TrialStatus::Failed, Some(e.to_string())),
        };
        surrogate.observe(space.to_unit(&params), objective)?;
        let trial = HpoTrial {
            index,
            params,
            objective,
            status,
            message,
        };
        on_trial(&trial);
        trials.push(trial);
    }
    let best = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Done)
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .cloned()
        .ok_or(Error::AllTrialsFailed)?;
    Ok(PhaseOutcome {
        space: space.clone(),
        trials,
        best,
        surrogate,
    })
}

pub fn write_trials_csv(space: &SearchSpace, trials: &[HpoTrial], path: &Path) -> Result<()> {
    let mut out = String::from("trial,");
    for n in space.names() {
        out.push_str(n);
        out.push(',');
    }
    out.push_str("objective,status\n");
    for t in trials {
        out.push_str(&t.index.to_string());
        for p in &t.params {
            out.push_str(&format!(",{p}"));
        }
        let status = match t.status {
            TrialStatus::Pending => "pending",
            TrialStatus::Done => "done",
            TrialStatus::Failed => "failed",
        };
        out.push_str(&format!(",{},{status}\n", t.objective));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Averaged prediction over a grid of one or two dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdGrid {
    pub dims: Vec<String>,
    /// Grid coordinates followed by the averaged objective.
    pub rows: Vec<(Vec<f64>, f64)>,
}

impl PdGrid {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = self.dims.join(",");
        out.push_str(",objective\n");
        for (x, y) in &self.rows {
            for v in x {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{y}\n"));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

fn grid_values(dim: &Dimension, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let mut v: Vec<f64> = (0..n).map(|i| dim.from_unit(i as f64 / (n - 1) as f64)).collect();
    v.dedup();
    v
}

/// Partial dependence of `predict` on `dims`: each grid value replaces the
/// chosen coordinates of every point in `background` and the predictions are
/// averaged.
pub fn partial_dependence_with(
    predict: impl Fn(&[f64]) -> f64,
    space: &SearchSpace,
    background: &[Vec<f64>],
    dims: &[usize],
    grid: usize,
) -> Result<PdGrid> {
    if dims.is_empty() || dims.len() > 2 || dims.iter().any(|&d| d >= space.len()) {
        return Err(Error::ConfigInvalid("partial dependence needs one or two valid dimensions".into()));
    }
    if dims.len() == 2 && dims[0] == dims[1] {
        return Err(Error::ConfigInvalid("partial dependence dimensions must differ".into()));
    }
    if background.len() < 2 {
        return Err(Error::TooFewSeries("partial dependence needs at least two trials".into()));
    }
    let axes: Vec<Vec<f64>> = dims.iter().map(|&d| grid_values(&space.dims[d], grid)).collect();
    let mut coords: Vec<Vec<f64>> = axes[0].iter().map(|&v| vec![v]).collect();
    if let Some(second) = axes.get(1) {
        coords = coords
            .into_iter()
            .flat_map(|c| second.iter().map(move |&v| vec![c[0], v]))
            .collect();
    }
    let rows = coords
        .into_iter()
        .map(|c| {
            let total: f64 = background
                .iter()
                .map(|p| {
                    let mut x = p.clone();
                    for (&d, &v) in dims.iter().zip(&c) {
                        x[d] = v;
                    }
                    predict(&x)
                })
                .sum();
            (c, total / background.len() as f64)
        })
        .collect();
    Ok(PdGrid {
        dims: dims.iter().map(|&d| space.dims[d].name.clone()).collect(),
        rows,
    })
}

/// Partial dependence of the surrogate's posterior mean, averaged over the
/// completed trials.
pub fn partial_dependence(
    surrogate: &Surrogate,
    space: &SearchSpace,
    trials: &[HpoTrial],
    dims: &[usize],
    grid: usize,
) -> Result<PdGrid> {
    let background: Vec<Vec<f64>> = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Done)
        .map(|t| t.params.clone())
        .collect();
    partial_dependence_with(
        |x| surrogate.posterior(&space.to_unit(x)).0,
        space,
        &background,
        dims,
        grid,
    )
}
