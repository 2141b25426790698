// SPDX-License-Identifier: MIT OR Apache-2.0

/// Probability floor applied before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable two-class softmax.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Categorical cross-entropy `-ln p[target]`.
pub fn cross_entropy_loss(probs: [f64; 2], target: usize) -> f64 {
    -probs[target].max(PROB_FLOOR).ln()
}
