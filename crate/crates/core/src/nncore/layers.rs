//! Stateless layer math: affine maps, softmax, losses, dropout.

use super::matrix::Matrix;
use super::rng::Rng;
use super::NnError;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// W·x + b
pub fn affine(w: &Matrix, b: &[f64], x: &[f64]) -> Result<Vec<f64>, NnError> {
    if x.len() != w.cols() || b.len() != w.rows() {
        return Err(NnError::Shape(format!(
            "affine: W is {}x{}, b has {}, x has {}",
            w.rows(),
            w.cols(),
            b.len(),
            x.len()
        )));
    }
    let mut out = b.to_vec();
    for (r, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (wv, xv) in w.row(r).iter().zip(x) {
            acc += wv * xv;
        }
        *o += acc;
    }
    Ok(out)
}

/// Gradients of an affine layer given dL/dy. Accumulates into dw/db and
/// returns dL/dx.
pub fn affine_backward(
    w: &Matrix,
    x: &[f64],
    dy: &[f64],
    dw: &mut Matrix,
    db: &mut [f64],
) -> Vec<f64> {
    dw.add_outer(dy, x);
    for (d, g) in db.iter_mut().zip(dy) {
        *d += g;
    }
    let mut dx = vec![0.0; x.len()];
    w.matvec_t_add(dy, &mut dx);
    dx
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    assert!(!z.is_empty(), "softmax of empty vector");
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// log softmax(z), stable for large logits.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    assert!(!z.is_empty(), "log_softmax of empty vector");
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    z.iter().map(|v| v - log_sum).collect()
}

const PROB_CLAMP: f64 = 1e-12;

/// Binary log loss −[y·ln p + (1−y)·ln(1−p)], with p clamped away from {0,1}.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// −ln(probs[target])
pub fn xent_loss(probs: &[f64], target: usize) -> Result<f64, NnError> {
    if target >= probs.len() {
        return Err(NnError::Shape(format!(
            "xent target {} out of range {}",
            target,
            probs.len()
        )));
    }
    Ok(-probs[target].max(PROB_CLAMP).ln())
}

/// Fused softmax + cross-entropy. Returns the loss and dL/dlogits, which is
/// simply softmax(logits) − onehot(target).
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>), NnError> {
    if target >= logits.len() {
        return Err(NnError::Shape(format!(
            "xent target {} out of range {}",
            target,
            logits.len()
        )));
    }
    let mut dlogits = softmax(logits);
    let loss = -dlogits[target].max(PROB_CLAMP).ln();
    dlogits[target] -= 1.0;
    Ok((loss, dlogits))
}

/// Inverted dropout mask: entries are 0 with probability p, else 1/(1−p).
/// Applied at training time only; inference uses no mask.
pub fn dropout_mask(rng: &mut Rng, len: usize, p: f64) -> Result<Vec<f64>, NnError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::InvalidArg(format!(
            "dropout probability must be in [0,1), got {p}"
        )));
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..len)
        .map(|_| if rng.next_f64() < p { 0.0 } else { keep })
        .collect())
}
