// SPDX-License-Identifier: MIT OR Apache-2.0

//! Central finite differences against the analytic backward pass.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentinel_core::nn::{forward_batch, init_params, loss_and_gradients, GruModel, ModelSpec};

const STEP: f64 = 1e-5;

fn batch_loss(model: &GruModel, inputs: &Array3<f64>, targets: &[usize]) -> f64 {
    let cache = forward_batch(model, inputs.view()).unwrap();
    let p = cache.probs();
    targets
        .iter()
        .enumerate()
        .map(|(b, &t)| -p[[b, t]].ln())
        .sum::<f64>()
        / targets.len() as f64
}

/// Worst relative error over every parameter. Gradients whose magnitudes
/// are both below `floor` are compared against the floor.
fn max_relative_error(model: &GruModel, inputs: &Array3<f64>, targets: &[usize]) -> (f64, usize) {
    let (_, grads) = loss_and_gradients(model, inputs.view(), targets).unwrap();
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut idx = 0;
    let n_tensors = probe.params.tensors().len();
    for ti in 0..n_tensors {
        let len = probe.params.tensors()[ti].len();
        for i in 0..len {
            let orig = probe.params.tensors()[ti][i];
            probe.params.tensors_mut()[ti][i] = orig + STEP;
            let plus = batch_loss(&probe, inputs, targets);
            probe.params.tensors_mut()[ti][i] = orig - STEP;
            let minus = batch_loss(&probe, inputs, targets);
            probe.params.tensors_mut()[ti][i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            idx += 1;
        }
    }
    (worst, idx)
}

fn random_batch(steps: usize, batch: usize, seed: u64) -> (Array3<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array3::from_shape_fn((steps, batch, 2), |_| rng.gen_range(-1.0..1.0));
    let t = (0..batch).map(|_| rng.gen_range(0..2)).collect();
    (x, t)
}

fn check(units: Vec<usize>, bidirectional: bool, batch: usize, seed: u64) {
    let spec = ModelSpec::new(units.clone(), bidirectional, 20);
    let mut model = init_params(&spec, seed).unwrap();
    // non-zero biases so every bias path is exercised
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for layer in &mut model.params.layers {
        for dir in std::iter::once(&mut layer.forward).chain(layer.backward.as_mut()) {
            dir.b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
    }
    let (x, t) = random_batch(20, batch, seed + 1);
    let (err, n) = max_relative_error(&model, &x, &t);
    println!(
        "units={units:?} bidirectional={bidirectional} batch={batch}: {n} params, max rel err {err:.3e}"
    );
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn vanilla_single_layer() {
    check(vec![8], false, 1, 1);
}

#[test]
fn vanilla_two_layers() {
    check(vec![8, 8], false, 1, 2);
}

#[test]
fn bidirectional_two_layers() {
    check(vec![8, 8], true, 1, 3);
}

#[test]
fn bidirectional_batched() {
    check(vec![5, 4], true, 3, 4);
}

#[test]
fn single_window_api_agrees_with_batch() {
    let spec = ModelSpec::new(vec![6], true, 20);
    let model = init_params(&spec, 9).unwrap();
    let (x, _) = random_batch(20, 1, 10);
    let window: Array2<f64> = x.index_axis(ndarray::Axis(1), 0).to_owned();
    let (p, cache) = sentinel_core::nn::forward_sequence(window.view(), &model).unwrap();
    let (loss_a, g_a) = sentinel_core::nn::backward(&model, &cache, &[1]).unwrap();
    let (loss_b, g_b) = loss_and_gradients(&model, x.view(), &[1]).unwrap();
    assert_eq!(loss_a, loss_b);
    assert_eq!(g_a, g_b);
    assert!((loss_a + p[1].ln()).abs() < 1e-15);
}
