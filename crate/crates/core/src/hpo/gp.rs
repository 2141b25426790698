// SPDX-License-Identifier: MIT OR Apache-2.0

//! Gaussian-process surrogate on the unit cube with an ARD squared-exponential
//! kernel, and the expected-improvement acquisition.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Diagonal jitter; escalated tenfold up to [`MAX_JITTER`] when the kernel
/// matrix is not numerically positive definite.
pub const JITTER: f64 = 1e-8;
pub const MAX_JITTER: f64 = 1e-2;

const LENGTH_BOUNDS: (f64, f64) = (0.03, 3.0);
const SIGNAL_BOUNDS: (f64, f64) = (0.1, 10.0);
const RANDOM_STARTS: usize = 48;
const REFINE_ROUNDS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// One length scale per input dimension, in unit-cube coordinates.
    pub length_scales: Vec<f64>,
    /// Prior variance in standardized objective units.
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_variance * (-0.5 * d2).exp()
    }
}

#[derive(Clone, Debug)]
pub struct Surrogate {
    dim: usize,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    pub kernel: KernelParams,
    y_mean: f64,
    y_scale: f64,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    seed: u64,
}

impl Surrogate {
    pub fn new(dim: usize, seed: u64) -> Self {
        Surrogate {
            dim,
            xs: Vec::new(),
            ys: Vec::new(),
            kernel: KernelParams {
                length_scales: vec![0.3; dim],
                signal_variance: 1.0,
                noise_variance: JITTER,
            },
            y_mean: 0.0,
            y_scale: 1.0,
            chol: None,
            alpha: DVector::zeros(0),
            seed,
        }
    }

    /// Surrogate with fixed kernel hyperparameters, never refit.
    pub fn with_kernel(dim: usize, kernel: KernelParams) -> Self {
        let mut s = Surrogate::new(dim, 0);
        s.kernel = kernel;
        s
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn observations(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.xs.iter().map(Vec::as_slice).zip(self.ys.iter().copied())
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.ys
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Adds a unit-cube observation and refits the length scales by maximum
    /// marginal likelihood.
    pub fn observe(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        self.push(x, y)?;
        self.fit_hyperparameters();
        self.refit()
    }

    /// Adds an observation keeping the current kernel.
    pub fn observe_fixed(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        self.push(x, y)?;
        self.refit()
    }

    fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::ConfigInvalid("observations must be finite".into()));
        }
        self.xs.push(x);
        self.ys.push(y);
        let n = self.ys.len() as f64;
        self.y_mean = self.ys.iter().sum::<f64>() / n;
        let var = self.ys.iter().map(|v| (v - self.y_mean).powi(2)).sum::<f64>() / n;
        self.y_scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Ok(())
    }

    fn standardized(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.ys.iter().map(|y| (y - self.y_mean) / self.y_scale))
    }

    fn gram(&self, kernel: &KernelParams, jitter: f64) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| {
            kernel.k(&self.xs[i], &self.xs[j]) + if i == j { jitter } else { 0.0 }
        })
    }

    fn factor(&self, kernel: &KernelParams) -> Option<(Cholesky<f64, Dyn>, f64)> {
        let mut jitter = kernel.noise_variance.max(JITTER);
        while jitter <= MAX_JITTER {
            if let Some(c) = Cholesky::new(self.gram(kernel, jitter)) {
                return Some((c, jitter));
            }
            jitter *= 10.0;
        }
        None
    }

    /// Log marginal likelihood of the standardized observations.
    pub fn log_marginal_likelihood(&self, kernel: &KernelParams) -> Option<f64> {
        let (chol, _) = self.factor(kernel)?;
        let y = self.standardized();
        let alpha = chol.solve(&y);
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        let n = self.len() as f64;
        Some(-0.5 * y.dot(&alpha) - logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
    }

    fn fit_hyperparameters(&mut self) {
        if self.len() < 2 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.len() as u64);
        let log_uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            (rng.gen_range(lo.ln()..hi.ln())).exp()
        };
        let mut best = self.kernel.clone();
        let mut best_lml = self.log_marginal_likelihood(&best).unwrap_or(f64::NEG_INFINITY);
        for _ in 0..RANDOM_STARTS {
            let cand = KernelParams {
                length_scales: (0..self.dim).map(|_| log_uniform(&mut rng, LENGTH_BOUNDS)).collect(),
                signal_variance: log_uniform(&mut rng, SIGNAL_BOUNDS),
                noise_variance: JITTER,
            };
            if let Some(l) = self.log_marginal_likelihood(&cand) {
                if l > best_lml {
                    best_lml = l;
                    best = cand;
                }
            }
        }
        // coordinate-wise multiplicative refinement
        let clamp = |v: f64, (lo, hi): (f64, f64)| v.clamp(lo, hi);
        for _ in 0..REFINE_ROUNDS {
            for d in 0..=self.dim {
                for factor in [1.5, 1.0 / 1.5] {
                    let mut cand = best.clone();
                    if d < self.dim {
                        cand.length_scales[d] = clamp(cand.length_scales[d] * factor, LENGTH_BOUNDS);
                    } else {
                        cand.signal_variance = clamp(cand.signal_variance * factor, SIGNAL_BOUNDS);
                    }
                    if let Some(l) = self.log_marginal_likelihood(&cand) {
                        if l > best_lml {
                            best_lml = l;
                            best = cand;
                        }
                    }
                }
            }
        }
        self.kernel = best;
    }

    fn refit(&mut self) -> Result<()> {
        let (chol, jitter) = self.factor(&self.kernel).ok_or(Error::DegenerateSurrogate)?;
        self.kernel.noise_variance = jitter;
        self.alpha = chol.solve(&self.standardized());
        self.chol = Some(chol);
        Ok(())
    }

    /// Posterior mean and variance in objective units. Before any observation
    /// this is the prior: zero mean and the signal variance.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let Some(chol) = &self.chol else {
            return (self.y_mean, self.kernel.signal_variance * self.y_scale.powi(2));
        };
        let ks = DVector::from_iterator(self.len(), self.xs.iter().map(|xi| self.kernel.k(xi, x)));
        let mean = self.y_mean + self.y_scale * ks.dot(&self.alpha);
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .map_or(0.0, |v| v.norm_squared());
        let var = (self.kernel.signal_variance - v).max(0.0) * self.y_scale.powi(2);
        (mean, var)
    }
}

/// Expected improvement below `best` for minimization. Zero when the
/// posterior has no variance.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    if sigma <= 1e-12 {
        return 0.0;
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let z = (best - mean) / sigma;
    ((best - mean) * unit.cdf(z) + sigma * unit.pdf(z)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ei_closed_forms() {
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((expected_improvement(0.5, 1.0, 0.5) - phi0).abs() < 1e-12);
        assert!((phi0 - 0.3989).abs() < 1e-4);
        assert_eq!(expected_improvement(0.2, 0.0, 0.5), 0.0);
        // far below the incumbent EI tends to the plain improvement
        assert!((expected_improvement(-10.0, 1e-4, 0.0) - 10.0).abs() < 1e-9);
    }

    fn fitted(points: &[(f64, f64)]) -> Surrogate {
        let mut s = Surrogate::new(1, 3);
        for &(x, y) in points {
            s.observe(vec![x], y).unwrap();
        }
        s
    }

    #[test]
    fn interpolates_observations() {
        let pts: Vec<(f64, f64)> = (0..8).map(|i| {
            let x = i as f64 / 7.0;
            (x, (3.0 * x).sin())
        }).collect();
        let s = fitted(&pts);
        for &(x, y) in &pts {
            assert!((s.posterior(&[x]).0 - y).abs() < 1e-3);
        }
    }

    #[test]
    fn duplicates_are_absorbed() {
        let s = fitted(&[(0.5, 1.0), (0.5, 1.0), (0.2, 0.0)]);
        assert!((s.posterior(&[0.5]).0 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn far_variance_returns_to_prior() {
        let kernel = KernelParams {
            length_scales: vec![0.05, 0.05],
            signal_variance: 1.0,
            noise_variance: JITTER,
        };
        let mut s = Surrogate::with_kernel(2, kernel);
        s.observe_fixed(vec![0.0, 0.0], 1.0).unwrap();
        s.observe_fixed(vec![0.05, 0.0], 3.0).unwrap();
        let prior = s.kernel.signal_variance * s.y_scale.powi(2);
        let (_, far) = s.posterior(&[1.0, 1.0]);
        assert!((far - prior).abs() < 1e-9 * prior);
        assert!(s.posterior(&[0.0, 0.0]).1 < 1e-6);
    }

    #[test]
    fn prior_before_data() {
        let s = Surrogate::new(3, 0);
        assert_eq!(s.posterior(&[0.1, 0.2, 0.3]), (0.0, 1.0));
    }

    proptest! {
        #[test]
        fn ei_non_negative(m in -5.0f64..5.0, v in 0.0f64..4.0, b in -5.0f64..5.0) {
            prop_assert!(expected_improvement(m, v, b) >= 0.0);
        }
    }
}
