//! Training losses. Both return the scalar loss together with the gradient
//! with respect to the prediction.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Euclidean regression loss: per image, half the squared error summed over
/// all chroma elements; averaged over the batch.
///
/// L = (1/N) · Σ_batch ½ Σ_{h,w} ‖Y − Ŷ‖² with gradient (Ŷ − Y)/N.
pub fn euclidean_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if !pred.same_shape(target) {
        return Err(Error::DimensionMismatch(format!(
            "euclidean_loss pred {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let inv_n = 1.0 / pred.n as f64;
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(pred.n, pred.c, pred.h, pred.w);
    for i in 0..pred.len() {
        let d = pred.data[i] as f64 - target.data[i] as f64;
        loss += 0.5 * d * d;
        grad.data[i] = (d * inv_n) as f32;
    }
    Ok((loss * inv_n, grad))
}

/// Softmax cross-entropy over the channel axis against dense per-pixel
/// target distributions, averaged over pixels and batch.
///
/// Gradient: (softmax(logits) − target) / (H·W·N).
pub fn softmax_cross_entropy(logits: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if !logits.same_shape(target) {
        return Err(Error::DimensionMismatch(format!(
            "softmax_cross_entropy logits {:?} vs target {:?}",
            logits.shape(),
            target.shape()
        )));
    }
    let q = logits.c;
    let plane = logits.h * logits.w;
    let scale = 1.0 / (logits.n * plane) as f64;
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(logits.n, logits.c, logits.h, logits.w);
    let mut probs = vec![0.0f64; q];
    for n in 0..logits.n {
        for p in 0..plane {
            let mut tsum = 0.0f64;
            for c in 0..q {
                tsum += target.data[target.idx(n, c, 0, 0) + p] as f64;
            }
            if (tsum - 1.0).abs() > 1e-4 {
                return Err(Error::InvalidTarget(format!(
                    "target distribution sums to {tsum} at batch {n} pixel {p}"
                )));
            }
            let mut max = f64::NEG_INFINITY;
            for c in 0..q {
                max = max.max(logits.data[logits.idx(n, c, 0, 0) + p] as f64);
            }
            let mut z = 0.0f64;
            for c in 0..q {
                let e = ((logits.data[logits.idx(n, c, 0, 0) + p] as f64) - max).exp();
                probs[c] = e;
                z += e;
            }
            let log_z = z.ln();
            for c in 0..q {
                let t = target.data[target.idx(n, c, 0, 0) + p] as f64;
                let log_p = (logits.data[logits.idx(n, c, 0, 0) + p] as f64) - max - log_z;
                loss -= t * log_p;
                let gi = grad.idx(n, c, 0, 0) + p;
                grad.data[gi] = ((probs[c] / z - t) * scale) as f32;
            }
        }
    }
    Ok((loss * scale, grad))
}
