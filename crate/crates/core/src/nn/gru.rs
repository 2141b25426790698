// SPDX-License-Identifier: MIT OR Apache-2.0

//! Batched forward pass and backpropagation through time.
//!
//! Sequences are laid out time-major: row `t * batch + b` of every
//! `(steps * batch) × width` matrix holds example `b` at time `t`, so the
//! input projections and all weight gradients reduce to single matrix
//! products over the whole window. Only the recurrent terms are computed
//! step by step.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};

use super::loss::{cross_entropy_loss, softmax2};
use super::{GruDirection, GruModel, Gradients, ModelParams, NUM_CLASSES};
use crate::error::{Error, Result};

#[inline]
fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// One GRU step for a single example.
pub fn gru_cell_forward(x: &[f64], h: &[f64], params: &GruDirection) -> Result<Vec<f64>> {
    let units = params.units();
    check_dim(params.input_dim(), x.len())?;
    check_dim(units, h.len())?;
    let (w, u, b) = (&params.w, &params.u, &params.b);
    let pre = |row: usize, state: &[f64]| -> f64 {
        let mut acc = b[row];
        for (j, xj) in x.iter().enumerate() {
            acc += w[[row, j]] * xj;
        }
        for (j, hj) in state.iter().enumerate() {
            acc += u[[row, j]] * hj;
        }
        acc
    };
    let z: Vec<f64> = (0..units).map(|i| sigmoid(pre(i, h))).collect();
    let r: Vec<f64> = (0..units).map(|i| sigmoid(pre(units + i, h))).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(r, h)| r * h).collect();
    Ok((0..units)
        .map(|i| {
            let cand = pre(2 * units + i, &rh).tanh();
            (1.0 - z[i]) * h[i] + z[i] * cand
        })
        .collect())
}

/// Per-step activations of one direction, all `(steps * batch) × units`.
/// `h_prev` holds the state entering the step at each time index.
#[derive(Clone, Debug)]
struct DirectionCache {
    h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    cand: Array2<f64>,
    rh: Array2<f64>,
}

#[derive(Clone, Debug)]
struct LayerCache {
    fwd: DirectionCache,
    bwd: Option<DirectionCache>,
    output: Array2<f64>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    steps: usize,
    batch: usize,
    input: Array2<f64>,
    layers: Vec<LayerCache>,
    features: Array2<f64>,
    probs: Array2<f64>,
}

impl ForwardCache {
    /// `batch × 2` class probabilities; column 1 is the syncope class.
    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    /// `batch × feature_dim` head input: final forward state, followed by
    /// the final backward state for bidirectional models.
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    /// Per-step output of layer `k`, shaped `steps × batch × width`.
    pub fn layer_output(&self, k: usize) -> ArrayView3<'_, f64> {
        let out = &self.layers[k].output;
        out.view()
            .into_shape_with_order((self.steps, self.batch, out.ncols()))
            .expect("time-major layout")
    }

    fn layer_input(&self, k: usize) -> &Array2<f64> {
        if k == 0 {
            &self.input
        } else {
            &self.layers[k - 1].output
        }
    }
}

fn time_index(step: usize, steps: usize, reverse: bool) -> usize {
    if reverse {
        steps - 1 - step
    } else {
        step
    }
}

fn run_direction(
    p: &GruDirection,
    x: &Array2<f64>,
    steps: usize,
    batch: usize,
    reverse: bool,
) -> (DirectionCache, Array2<f64>) {
    let units = p.units();
    let rows = steps * batch;
    let mut ax = x.dot(&p.w.t());
    ax += &p.b;
    let u_zr = p.u.slice(s![..2 * units, ..]);
    let u_h = p.u.slice(s![2 * units.., ..]);

    let mut cache = DirectionCache {
        h_prev: Array2::zeros((rows, units)),
        z: Array2::zeros((rows, units)),
        r: Array2::zeros((rows, units)),
        cand: Array2::zeros((rows, units)),
        rh: Array2::zeros((rows, units)),
    };
    let mut out = Array2::zeros((rows, units));
    let mut h = Array2::<f64>::zeros((batch, units));
    let mut a_zr = Array2::<f64>::zeros((batch, 2 * units));
    let mut a_h = Array2::<f64>::zeros((batch, units));

    for step in 0..steps {
        let t = time_index(step, steps, reverse);
        let blk = s![t * batch..(t + 1) * batch, ..];
        cache.h_prev.slice_mut(blk).assign(&h);

        a_zr.assign(&ax.slice(s![t * batch..(t + 1) * batch, ..2 * units]));
        general_mat_mul(1.0, &h, &u_zr.t(), 1.0, &mut a_zr);
        let mut z = cache.z.slice_mut(blk);
        let mut r = cache.r.slice_mut(blk);
        Zip::from(&mut z)
            .and(a_zr.slice(s![.., ..units]))
            .for_each(|z, &a| *z = sigmoid(a));
        Zip::from(&mut r)
            .and(a_zr.slice(s![.., units..]))
            .for_each(|r, &a| *r = sigmoid(a));

        let mut rh = cache.rh.slice_mut(blk);
        Zip::from(&mut rh).and(&r).and(&h).for_each(|rh, &r, &h| *rh = r * h);

        a_h.assign(&ax.slice(s![t * batch..(t + 1) * batch, 2 * units..]));
        general_mat_mul(1.0, &rh, &u_h.t(), 1.0, &mut a_h);
        let mut cand = cache.cand.slice_mut(blk);
        Zip::from(&mut cand).and(&a_h).for_each(|c, &a| *c = a.tanh());

        Zip::from(&mut h)
            .and(&z)
            .and(&cand)
            .for_each(|h, &z, &c| *h += z * (c - *h));
        out.slice_mut(blk).assign(&h);
    }
    (cache, out)
}

/// Accumulates this direction's parameter gradients into `grad` and returns
/// the gradient with respect to its input sequence.
#[allow(clippy::too_many_arguments)]
fn backward_direction(
    p: &GruDirection,
    cache: &DirectionCache,
    x: &Array2<f64>,
    d_out: ArrayView2<'_, f64>,
    steps: usize,
    batch: usize,
    reverse: bool,
    grad: &mut GruDirection,
    need_input_grad: bool,
) -> Option<Array2<f64>> {
    let units = p.units();
    let rows = steps * batch;
    let u_zr = p.u.slice(s![..2 * units, ..]);
    let u_h = p.u.slice(s![2 * units.., ..]);

    let mut d_pre = Array2::<f64>::zeros((rows, 3 * units));
    let mut dh = Array2::<f64>::zeros((batch, units));
    let mut d_rh = Array2::<f64>::zeros((batch, units));

    for step in (0..steps).rev() {
        let t = time_index(step, steps, reverse);
        let blk = s![t * batch..(t + 1) * batch, ..];
        dh += &d_out.slice(blk);

        let z = cache.z.slice(blk);
        let r = cache.r.slice(blk);
        let cand = cache.cand.slice(blk);
        let hp = cache.h_prev.slice(blk);
        let mut dp = d_pre.slice_mut(blk);
        let (mut da_z, mut da_r, mut da_h) =
            dp.multi_slice_mut((s![.., ..units], s![.., units..2 * units], s![.., 2 * units..]));

        Zip::from(&mut da_z)
            .and(&mut da_h)
            .and(&mut dh)
            .and(&z)
            .and(&cand)
            .and(&hp)
            .for_each(|da_z, da_h, dh, &z, &c, &hp| {
                let g = *dh;
                *da_z = g * (c - hp) * z * (1.0 - z);
                *da_h = g * z * (1.0 - c * c);
                *dh = g * (1.0 - z);
            });

        general_mat_mul(1.0, &da_h, &u_h, 0.0, &mut d_rh);
        Zip::from(&mut da_r)
            .and(&mut dh)
            .and(&d_rh)
            .and(&hp)
            .and(&r)
            .for_each(|da_r, dh, &drh, &hp, &r| {
                *da_r = drh * hp * r * (1.0 - r);
                *dh += drh * r;
            });
        let dp = d_pre.slice(s![t * batch..(t + 1) * batch, ..2 * units]);
        general_mat_mul(1.0, &dp, &u_zr, 1.0, &mut dh);
    }

    general_mat_mul(1.0, &d_pre.t(), x, 1.0, &mut grad.w);
    grad.b += &d_pre.sum_axis(Axis(0));
    {
        let mut gu_zr = grad.u.slice_mut(s![..2 * units, ..]);
        general_mat_mul(1.0, &d_pre.slice(s![.., ..2 * units]).t(), &cache.h_prev, 1.0, &mut gu_zr);
    }
    {
        let mut gu_h = grad.u.slice_mut(s![2 * units.., ..]);
        general_mat_mul(1.0, &d_pre.slice(s![.., 2 * units..]).t(), &cache.rh, 1.0, &mut gu_h);
    }
    need_input_grad.then(|| d_pre.dot(&p.w))
}

/// Forward pass over a time-major batch shaped `steps × batch × channels`.
pub fn forward_batch(model: &GruModel, inputs: ArrayView3<'_, f64>) -> Result<ForwardCache> {
    let spec = &model.spec;
    let (steps, batch, channels) = inputs.dim();
    check_dim(spec.window_size, steps)?;
    check_dim(spec.input_channels, channels)?;
    if batch == 0 {
        return Err(Error::DimensionMismatch { expected: 1, actual: 0 });
    }
    let input = inputs
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((steps * batch, channels))
        .expect("contiguous input");

    let mut layers: Vec<LayerCache> = Vec::with_capacity(spec.num_layers);
    for (k, lp) in model.params.layers.iter().enumerate() {
        let x = if k == 0 { &input } else { &layers[k - 1].output };
        let (fwd, out_f) = run_direction(&lp.forward, x, steps, batch, false);
        let (bwd, output) = match &lp.backward {
            Some(bp) => {
                let (bwd, out_b) = run_direction(bp, x, steps, batch, true);
                let units = lp.forward.units();
                let mut both = Array2::zeros((steps * batch, 2 * units));
                both.slice_mut(s![.., ..units]).assign(&out_f);
                both.slice_mut(s![.., units..]).assign(&out_b);
                (Some(bwd), both)
            }
            None => (None, out_f),
        };
        layers.push(LayerCache { fwd, bwd, output });
    }

    let top = layers.last().expect("at least one layer");
    let units = *spec.units_per_layer.last().expect("at least one layer");
    let last = (steps - 1) * batch;
    let features = if spec.bidirectional {
        concatenate(
            Axis(1),
            &[
                top.output.slice(s![last..last + batch, ..units]),
                top.output.slice(s![..batch, units..]),
            ],
        )
        .expect("matching rows")
    } else {
        top.output.slice(s![last..last + batch, ..]).to_owned()
    };

    let mut logits = features.dot(&model.params.head.w.t());
    logits += &model.params.head.b;
    let mut probs = Array2::zeros((batch, NUM_CLASSES));
    for (mut p, l) in probs.rows_mut().into_iter().zip(logits.rows()) {
        let s = softmax2([l[0], l[1]]);
        p[0] = s[0];
        p[1] = s[1];
    }
    Ok(ForwardCache {
        steps,
        batch,
        input,
        layers,
        features,
        probs,
    })
}

/// Forward pass on a single `steps × channels` window.
pub fn forward_sequence(
    window: ArrayView2<'_, f64>,
    model: &GruModel,
) -> Result<([f64; 2], ForwardCache)> {
    let (steps, channels) = window.dim();
    let batched = window.into_shape_with_order((steps, 1, channels)).map_or_else(
        |_| {
            window
                .to_owned()
                .into_shape_with_order((steps, 1, channels))
                .expect("owned reshape")
        },
        |v| v.to_owned(),
    );
    let cache = forward_batch(model, batched.view())?;
    let p = [cache.probs[[0, 0]], cache.probs[[0, 1]]];
    Ok((p, cache))
}

/// Class probabilities only.
pub fn predict_batch(model: &GruModel, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
    Ok(forward_batch(model, inputs)?.probs)
}

/// Mean cross-entropy over the batch and its exact gradient with respect to
/// every parameter.
pub fn backward(
    model: &GruModel,
    cache: &ForwardCache,
    targets: &[usize],
) -> Result<(f64, Gradients)> {
    let (steps, batch) = (cache.steps, cache.batch);
    check_dim(batch, targets.len())?;
    let spec = &model.spec;
    let params = &model.params;
    let mut grads = ModelParams::zeros(spec);

    let scale = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut d_logits = Array2::<f64>::zeros((batch, NUM_CLASSES));
    for (b, &target) in targets.iter().enumerate() {
        if target >= NUM_CLASSES {
            return Err(Error::DimensionMismatch { expected: NUM_CLASSES, actual: target + 1 });
        }
        let p = [cache.probs[[b, 0]], cache.probs[[b, 1]]];
        loss += cross_entropy_loss(p, target);
        for c in 0..NUM_CLASSES {
            let y = if c == target { 1.0 } else { 0.0 };
            d_logits[[b, c]] = (p[c] - y) * scale;
        }
    }
    loss *= scale;

    general_mat_mul(1.0, &d_logits.t(), &cache.features, 0.0, &mut grads.head.w);
    grads.head.b = d_logits.sum_axis(Axis(0));
    let d_features = d_logits.dot(&params.head.w);

    let top = spec.num_layers - 1;
    let units = spec.units_per_layer[top];
    let last = (steps - 1) * batch;
    let mut d_out = Array2::<f64>::zeros((steps * batch, spec.output_dim(top)));
    d_out
        .slice_mut(s![last..last + batch, ..units])
        .assign(&d_features.slice(s![.., ..units]));
    if spec.bidirectional {
        d_out
            .slice_mut(s![..batch, units..])
            .assign(&d_features.slice(s![.., units..]));
    }

    for k in (0..spec.num_layers).rev() {
        let lp = &params.layers[k];
        let lc = &cache.layers[k];
        let x = cache.layer_input(k);
        let units = spec.units_per_layer[k];
        let need = k > 0;
        let gl = &mut grads.layers[k];
        let dx_f = backward_direction(
            &lp.forward,
            &lc.fwd,
            x,
            d_out.slice(s![.., ..units]),
            steps,
            batch,
            false,
            &mut gl.forward,
            need,
        );
        let dx_b = match (&lp.backward, &lc.bwd, gl.backward.as_mut()) {
            (Some(bp), Some(bc), Some(gb)) => backward_direction(
                bp,
                bc,
                x,
                d_out.slice(s![.., units..]),
                steps,
                batch,
                true,
                gb,
                need,
            ),
            _ => None,
        };
        if let Some(mut dx) = dx_f {
            if let Some(db) = dx_b {
                dx += &db;
            }
            d_out = dx;
        }
    }
    Ok((loss, grads))
}

/// Forward and backward on a time-major batch.
pub fn loss_and_gradients(
    model: &GruModel,
    inputs: ArrayView3<'_, f64>,
    targets: &[usize],
) -> Result<(f64, Gradients)> {
    let cache = forward_batch(model, inputs)?;
    backward(model, &cache, targets)
}

/// Convenience for building batches from `(steps × channels)` windows.
pub fn stack_windows(windows: &[ArrayView2<'_, f64>]) -> Array3<f64> {
    let (steps, channels) = windows.first().map_or((0, 0), |w| w.dim());
    let mut out = Array3::zeros((steps, windows.len(), channels));
    for (b, w) in windows.iter().enumerate() {
        out.slice_mut(s![.., b, ..]).assign(w);
    }
    out
}
