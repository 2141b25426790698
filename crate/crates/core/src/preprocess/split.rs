// SPDX-License-Identifier: MIT OR Apache-2.0

//! Series-level class balancing and stratified train/test splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Label, RawRecording};
use crate::error::{Error, Result};

use super::CleanSeries;

pub trait Labelled {
    fn label(&self) -> Label;
}

impl Labelled for CleanSeries {
    fn label(&self) -> Label {
        self.label
    }
}

impl Labelled for RawRecording {
    fn label(&self) -> Label {
        self.label
    }
}

/// Undersamples the majority class uniformly without replacement so both
/// classes have the minority count. Input order is preserved.
pub fn balance_classes<T: Labelled>(items: Vec<T>, seed: u64) -> Vec<T> {
    let count = |l| items.iter().filter(|s| s.label() == l).count();
    let (n_syn, n_no) = (count(Label::Syncope), count(Label::NoSyncope));
    let (major, keep) = if n_no >= n_syn {
        (Label::NoSyncope, n_syn)
    } else {
        (Label::Syncope, n_no)
    };
    let major_total = n_syn.max(n_no);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; major_total];
    for i in rand::seq::index::sample(&mut rng, major_total, keep) {
        chosen[i] = true;
    }
    let mut k = 0;
    items
        .into_iter()
        .filter(|s| {
            if s.label() != major {
                return keep > 0;
            }
            let pick = chosen[k];
            k += 1;
            pick
        })
        .collect()
}

/// Seeded stratified split. Each class is shuffled independently and the
/// first `round(train_fraction * n_class)` members go to training.
pub fn stratified_split<T: Labelled>(
    items: Vec<T>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::ConfigInvalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut train_mask = vec![false; items.len()];
    for (stream, label) in [Label::Syncope, Label::NoSyncope].into_iter().enumerate() {
        let mut members: Vec<usize> = (0..items.len())
            .filter(|&i| items[i].label() == label)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        members.shuffle(&mut rng);
        let n_train = (train_fraction * members.len() as f64).round() as usize;
        if n_train == 0 || n_train == members.len() {
            return Err(Error::TooFewSeries(format!(
                "{} {label} series cannot be split at fraction {train_fraction}",
                members.len()
            )));
        }
        for &i in &members[..n_train] {
            train_mask[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (item, is_train) in items.into_iter().zip(train_mask) {
        if is_train {
            train.push(item);
        } else {
            test.push(item);
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Clone, Debug, PartialEq)]
    struct Item(usize, Label);

    impl Labelled for Item {
        fn label(&self) -> Label {
            self.1
        }
    }

    fn items(n_syn: usize, n_no: usize) -> Vec<Item> {
        (0..n_syn)
            .map(|i| Item(i, Label::Syncope))
            .chain((0..n_no).map(|i| Item(n_syn + i, Label::NoSyncope)))
            .collect()
    }

    fn counts(v: &[Item]) -> (usize, usize) {
        let s = v.iter().filter(|i| i.1 == Label::Syncope).count();
        (s, v.len() - s)
    }

    #[test]
    fn balance_96_570() {
        let out = balance_classes(items(96, 570), 1);
        assert_eq!(out.len(), 192);
        assert_eq!(counts(&out), (96, 96));
    }

    #[test]
    fn already_balanced_unchanged() {
        let input = items(5, 5);
        assert_eq!(balance_classes(input.clone(), 9), input);
    }

    #[test]
    fn balance_seed_determinism() {
        let a = balance_classes(items(10, 60), 4);
        assert_eq!(a, balance_classes(items(10, 60), 4));
        let differing = (0..20)
            .filter(|s| balance_classes(items(10, 60), 100 + s) != a)
            .count();
        assert!(differing >= 19, "only {differing} of 20 seeds differ");
    }

    #[test]
    fn split_192() {
        let (train, test) = stratified_split(items(96, 96), 0.802, 3).unwrap();
        assert_eq!((train.len(), test.len()), (154, 38));
        assert_eq!(counts(&train), (77, 77));
        assert_eq!(counts(&test), (19, 19));
    }

    #[test]
    fn split_four() {
        let (train, test) = stratified_split(items(2, 2), 0.5, 0).unwrap();
        assert_eq!(counts(&train), (1, 1));
        assert_eq!(counts(&test), (1, 1));
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            stratified_split(items(2, 2), 0.9, 0),
            Err(Error::TooFewSeries(_))
        ));
        assert!(matches!(
            stratified_split(items(2, 2), 1.0, 0),
            Err(Error::ConfigInvalid(_))
        ));
    }

    #[test]
    fn split_is_deterministic() {
        let a = stratified_split(items(30, 30), 0.8, 12).unwrap();
        let b = stratified_split(items(30, 30), 0.8, 12).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn balance_equalises(n_syn in 1usize..40, n_no in 1usize..200, seed in any::<u64>()) {
            let out = balance_classes(items(n_syn, n_no), seed);
            let (s, n) = counts(&out);
            prop_assert_eq!(s, n);
            prop_assert_eq!(s, n_syn.min(n_no));
        }

        #[test]
        fn split_partitions(n in 2usize..60, frac in 0.3f64..0.7, seed in any::<u64>()) {
            let input = items(n, n);
            let (train, test) = stratified_split(input.clone(), frac, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), input.len());
            let mut all: Vec<usize> = train.iter().chain(&test).map(|i| i.0).collect();
            all.sort();
            prop_assert_eq!(all, (0..2 * n).collect::<Vec<_>>());
            let (a, b) = counts(&train);
            prop_assert_eq!(a, b);
        }
    }
}
