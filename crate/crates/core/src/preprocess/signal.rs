// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scalar signal transforms: studentization, running median, min-max scaling.

use crate::error::{Error, Result};

/// Mean and population standard deviation (divisor `n`), two-pass.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Rescales to zero mean and unit population standard deviation.
pub fn studentize(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::DegenerateSignal("studentize needs at least two samples"));
    }
    let (mean, std) = mean_std(x);
    if !std.is_finite() || std <= 1e-12 * (1.0 + mean.abs()) {
        return Err(Error::DegenerateSignal("zero variance"));
    }
    Ok(x.iter().map(|v| (v - mean) / std).collect())
}

/// Centered running median. Near the edges the window is clipped to the
/// samples that exist; an even-sized clipped window takes the mean of its two
/// middle values.
pub fn median_filter(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window.is_multiple_of(2) || window > x.len() {
        return Err(Error::BadWindow {
            window,
            len: x.len(),
        });
    }
    let half = window / 2;
    let n = x.len();
    let mut sorted: Vec<f64> = Vec::with_capacity(window);
    let mut hi = 0; // exclusive right end of the samples currently held
    let mut lo = 0; // inclusive left end
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let want_hi = (i + half + 1).min(n);
        let want_lo = i.saturating_sub(half);
        while hi < want_hi {
            let v = x[hi];
            let at = sorted.partition_point(|s| s.total_cmp(&v).is_lt());
            sorted.insert(at, v);
            hi += 1;
        }
        while lo < want_lo {
            let v = x[lo];
            let at = sorted.partition_point(|s| s.total_cmp(&v).is_lt());
            sorted.remove(at);
            lo += 1;
        }
        let m = sorted.len();
        out.push(if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        });
    }
    Ok(out)
}

/// Per-channel scaling bounds recorded before rescaling to `[-1, 1]`.
pub type MinMax = (f64, f64);

/// Maps `min -> -1` and `max -> +1` linearly.
pub fn minmax_normalize(x: &[f64]) -> Result<(Vec<f64>, MinMax)> {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x.is_empty() || !(max > min) || !(max - min).is_finite() {
        return Err(Error::DegenerateSignal("max equals min"));
    }
    let range = max - min;
    let y = x
        .iter()
        .map(|v| (2.0 * (v - min) / range - 1.0).clamp(-1.0, 1.0))
        .collect();
    Ok((y, (min, max)))
}

pub fn minmax_denormalize(y: &[f64], (min, max): MinMax) -> Vec<f64> {
    y.iter().map(|v| (v + 1.0) * 0.5 * (max - min) + min).collect()
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sort_median(window: &[f64]) -> f64 {
        let mut w = window.to_vec();
        w.sort_by(f64::total_cmp);
        let m = w.len();
        if m % 2 == 1 {
            w[m / 2]
        } else {
            (w[m / 2 - 1] + w[m / 2]) / 2.0
        }
    }

    #[test]
    fn studentize_pair() {
        assert_eq!(studentize(&[1.0, 3.0]).unwrap(), vec![-1.0, 1.0]);
    }

    #[test]
    fn studentize_constant_is_degenerate() {
        assert!(matches!(studentize(&[5.0, 5.0, 5.0]), Err(Error::DegenerateSignal(_))));
    }

    #[test]
    fn studentize_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..1000).map(|_| rng.gen_range(-50.0..120.0)).collect();
        let z = studentize(&x).unwrap();
        let n = z.len() as f64;
        let mu = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        assert!(mu.abs() < 1e-12);
        assert!((var.sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_of_constant() {
        let x = vec![4.2; 40];
        assert_eq!(median_filter(&x, 31).unwrap(), x);
    }

    #[test]
    fn median_suppresses_single_spike() {
        assert_eq!(median_filter(&[0.0, 0.0, 100.0, 0.0, 0.0], 3).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn median_rejects_bad_windows() {
        let x = [1.0, 2.0, 3.0];
        assert!(median_filter(&x, 2).is_err());
        assert!(median_filter(&x, 5).is_err());
        assert!(median_filter(&x, 0).is_err());
    }

    #[test]
    fn median_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = median_filter(&x, 31).unwrap();
        for (i, &m) in fast.iter().enumerate() {
            let lo = i.saturating_sub(15);
            let hi = (i + 16).min(x.len());
            assert_eq!(m, sort_median(&x[lo..hi]), "index {i}");
        }
    }

    #[test]
    fn minmax_examples() {
        let (y, mm) = minmax_normalize(&[0.0, 5.0, 10.0]).unwrap();
        assert_eq!(y, vec![-1.0, 0.0, 1.0]);
        assert_eq!(mm, (0.0, 10.0));
        assert!(minmax_normalize(&[-3.0, -3.0]).is_err());
    }

    #[test]
    fn minmax_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..500).map(|_| rng.gen_range(40.0..160.0)).collect();
        let (y, mm) = minmax_normalize(&x).unwrap();
        assert_eq!(y.iter().copied().fold(f64::INFINITY, f64::min), -1.0);
        assert_eq!(y.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
        for (a, b) in x.iter().zip(minmax_denormalize(&y, mm)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn median_filter_equals_oracle(
            x in proptest::collection::vec(-1e3f64..1e3, 1..80),
            half in 0usize..6,
        ) {
            let w = 2 * half + 1;
            prop_assume!(w <= x.len());
            let fast = median_filter(&x, w).unwrap();
            for i in 0..x.len() {
                let lo = i.saturating_sub(half);
                let hi = (i + half + 1).min(x.len());
                prop_assert_eq!(fast[i], sort_median(&x[lo..hi]));
            }
        }
    }
}
