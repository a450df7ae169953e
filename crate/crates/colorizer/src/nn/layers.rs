//! Pointwise and normalization layers: ReLU, tanh, nearest/bilinear
//! upsampling, and batch normalization, each with an exact analytic backward.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.grad = None;
    for v in &mut out.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient passes where the forward input was > 0; the subgradient at
/// exactly 0 is taken as 0.
pub fn relu_backward(input: &Tensor, dout: &Tensor) -> Tensor {
    let mut din = dout.clone();
    din.grad = None;
    for (d, &x) in din.data.iter_mut().zip(&input.data) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    din
}

pub fn tanh_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.grad = None;
    for v in &mut out.data {
        *v = v.tanh();
    }
    out
}

pub fn tanh_backward(output: &Tensor, dout: &Tensor) -> Tensor {
    let mut din = dout.clone();
    din.grad = None;
    for (d, &y) in din.data.iter_mut().zip(&output.data) {
        *d *= 1.0 - y * y;
    }
    din
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

/// Per-axis bilinear sampling taps for an integer upscale with half-pixel
/// centers: output o samples source (o + 0.5)/f - 0.5.
fn bilinear_taps(out_len: usize, factor: usize, in_len: usize) -> Vec<(usize, usize, f32)> {
    (0..out_len)
        .map(|o| {
            let f = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = f.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, (f - i0 as f64) as f32)
        })
        .collect()
}

pub fn upsample_forward(input: &Tensor, factor: usize, mode: UpsampleMode) -> Tensor {
    assert!(factor >= 1);
    if factor == 1 {
        let mut out = input.clone();
        out.grad = None;
        return out;
    }
    let (oh, ow) = (input.h * factor, input.w * factor);
    let mut out = Tensor::zeros(input.n, input.c, oh, ow);
    match mode {
        UpsampleMode::Nearest => {
            for n in 0..input.n {
                for c in 0..input.c {
                    for oy in 0..oh {
                        let iy = oy / factor;
                        let src = input.idx(n, c, iy, 0);
                        let dst = out.idx(n, c, oy, 0);
                        for ox in 0..ow {
                            out.data[dst + ox] = input.data[src + ox / factor];
                        }
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let ty = bilinear_taps(oh, factor, input.h);
            let tx = bilinear_taps(ow, factor, input.w);
            for n in 0..input.n {
                for c in 0..input.c {
                    let src = input.idx(n, c, 0, 0);
                    let dst = out.idx(n, c, 0, 0);
                    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                            let p00 = input.data[src + y0 * input.w + x0];
                            let p01 = input.data[src + y0 * input.w + x1];
                            let p10 = input.data[src + y1 * input.w + x0];
                            let p11 = input.data[src + y1 * input.w + x1];
                            let top = p00 + (p01 - p00) * wx;
                            let bot = p10 + (p11 - p10) * wx;
                            out.data[dst + oy * ow + ox] = top + (bot - top) * wy;
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn upsample_backward(
    dout: &Tensor,
    factor: usize,
    mode: UpsampleMode,
    in_h: usize,
    in_w: usize,
) -> Tensor {
    if factor == 1 {
        let mut din = dout.clone();
        din.grad = None;
        return din;
    }
    let mut din = Tensor::zeros(dout.n, dout.c, in_h, in_w);
    match mode {
        UpsampleMode::Nearest => {
            for n in 0..dout.n {
                for c in 0..dout.c {
                    for oy in 0..dout.h {
                        let src = dout.idx(n, c, oy, 0);
                        let dst = din.idx(n, c, oy / factor, 0);
                        for ox in 0..dout.w {
                            din.data[dst + ox / factor] += dout.data[src + ox];
                        }
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let ty = bilinear_taps(dout.h, factor, in_h);
            let tx = bilinear_taps(dout.w, factor, in_w);
            for n in 0..dout.n {
                for c in 0..dout.c {
                    let src = dout.idx(n, c, 0, 0);
                    let dst = din.idx(n, c, 0, 0);
                    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                            let g = dout.data[src + oy * dout.w + ox];
                            din.data[dst + y0 * in_w + x0] += g * (1.0 - wy) * (1.0 - wx);
                            din.data[dst + y0 * in_w + x1] += g * (1.0 - wy) * wx;
                            din.data[dst + y1 * in_w + x0] += g * wy * (1.0 - wx);
                            din.data[dst + y1 * in_w + x1] += g * wy * wx;
                        }
                    }
                }
            }
        }
    }
    din
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

pub const BN_MOMENTUM: f32 = 0.1;

/// Saved forward state needed by the batch-norm backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
    pub mode: BnMode,
}

/// Batch normalization over (N, H, W) per channel. Train mode normalizes by
/// batch statistics and updates running stats in place with momentum 0.1;
/// eval mode uses the running stats.
pub fn batchnorm_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    eps: f32,
    mode: BnMode,
) -> Result<(Tensor, BatchNormCache)> {
    let ch = input.c;
    if gamma.len() != ch || beta.len() != ch || running_mean.len() != ch || running_var.len() != ch
    {
        return Err(Error::DimensionMismatch(format!(
            "batchnorm parameter length != {ch} channels"
        )));
    }
    let m = input.n * input.h * input.w;
    let plane = input.h * input.w;
    let mut out = Tensor::zeros(input.n, input.c, input.h, input.w);
    let mut xhat = vec![0.0f32; input.len()];
    let mut inv_std = vec![0.0f32; ch];
    for c in 0..ch {
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut sum = 0.0f64;
                for n in 0..input.n {
                    let base = input.idx(n, c, 0, 0);
                    for i in 0..plane {
                        sum += input.data[base + i] as f64;
                    }
                }
                let mean = sum / m as f64;
                let mut var = 0.0f64;
                for n in 0..input.n {
                    let base = input.idx(n, c, 0, 0);
                    for i in 0..plane {
                        let d = input.data[base + i] as f64 - mean;
                        var += d * d;
                    }
                }
                let var = var / m as f64;
                running_mean.data[c] =
                    (1.0 - BN_MOMENTUM) * running_mean.data[c] + BN_MOMENTUM * mean as f32;
                running_var.data[c] =
                    (1.0 - BN_MOMENTUM) * running_var.data[c] + BN_MOMENTUM * var as f32;
                (mean as f32, var as f32)
            }
            BnMode::Eval => (running_mean.data[c], running_var.data[c]),
        };
        let istd = 1.0 / (var + eps).sqrt();
        inv_std[c] = istd;
        let g = gamma.data[c];
        let b = beta.data[c];
        for n in 0..input.n {
            let base = input.idx(n, c, 0, 0);
            for i in 0..plane {
                let xh = (input.data[base + i] - mean) * istd;
                xhat[base + i] = xh;
                out.data[base + i] = g * xh + b;
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            xhat,
            inv_std,
            mode,
        },
    ))
}

/// Returns (input grad, gamma grad, beta grad).
pub fn batchnorm_backward(
    dout: &Tensor,
    gamma: &Tensor,
    cache: &BatchNormCache,
) -> (Tensor, Tensor, Tensor) {
    let ch = dout.c;
    let m = dout.n * dout.h * dout.w;
    let plane = dout.h * dout.w;
    let mut din = Tensor::zeros(dout.n, dout.c, dout.h, dout.w);
    let mut dgamma = Tensor::zeros(1, ch, 1, 1);
    let mut dbeta = Tensor::zeros(1, ch, 1, 1);
    for c in 0..ch {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for n in 0..dout.n {
            let base = dout.idx(n, c, 0, 0);
            for i in 0..plane {
                let dy = dout.data[base + i] as f64;
                sum_dy += dy;
                sum_dy_xhat += dy * cache.xhat[base + i] as f64;
            }
        }
        dbeta.data[c] = sum_dy as f32;
        dgamma.data[c] = sum_dy_xhat as f32;
        let g = gamma.data[c] as f64;
        let istd = cache.inv_std[c] as f64;
        match cache.mode {
            BnMode::Train => {
                let inv_m = 1.0 / m as f64;
                for n in 0..dout.n {
                    let base = dout.idx(n, c, 0, 0);
                    for i in 0..plane {
                        let dy = dout.data[base + i] as f64;
                        let xh = cache.xhat[base + i] as f64;
                        din.data[base + i] =
                            (g * istd * (dy - inv_m * sum_dy - xh * inv_m * sum_dy_xhat)) as f32;
                    }
                }
            }
            BnMode::Eval => {
                // running stats are constants in eval mode
                for n in 0..dout.n {
                    let base = dout.idx(n, c, 0, 0);
                    for i in 0..plane {
                        din.data[base + i] = (g * istd * dout.data[base + i] as f64) as f32;
                    }
                }
            }
        }
    }
    (din, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_basics() {
        let x = Tensor::from_vec(1, 1, 1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data, vec![0.0, 0.0, 2.0]);
        let dout = Tensor::from_vec(1, 1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(relu_backward(&x, &dout).data, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_positive_passthrough() {
        let x = Tensor::from_vec(1, 1, 2, 2, vec![0.5, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(relu_forward(&x).data, x.data);
    }

    #[test]
    fn nearest_upsample_replicates() {
        let x = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample_forward(&x, 2, UpsampleMode::Nearest);
        assert_eq!(
            y.data,
            vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn factor_one_is_identity() {
        let x = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(upsample_forward(&x, 1, UpsampleMode::Nearest).data, x.data);
        assert_eq!(upsample_forward(&x, 1, UpsampleMode::Bilinear).data, x.data);
    }

    #[test]
    fn nearest_backward_sums_blocks() {
        let dout = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let din = upsample_backward(&dout, 2, UpsampleMode::Nearest, 1, 1);
        assert_eq!(din.data, vec![10.0]);
    }

    #[test]
    fn bilinear_upsample_interior_midpoints() {
        // Half-pixel convention: output 1 of a 2x upscale samples source 0.25,
        // output 2 samples source 0.75.
        let x = Tensor::from_vec(1, 1, 2, 2, vec![0.0, 2.0, 2.0, 4.0]).unwrap();
        let y = upsample_forward(&x, 2, UpsampleMode::Bilinear);
        assert_eq!(y.shape(), (1, 1, 4, 4));
        // row 1 (fy = 0.25): horizontal samples at fx = 0, 0.25, 0.75, 1
        let row1: Vec<f32> = y.data[4..8].to_vec();
        assert_eq!(row1, vec![0.5, 1.0, 2.0, 2.5]);
    }

    #[test]
    fn batchnorm_constant_input_zeroes() {
        let x = Tensor::from_vec(2, 1, 2, 2, vec![5.0; 8]).unwrap();
        let gamma = Tensor::from_vec(1, 1, 1, 1, vec![1.0]).unwrap();
        let beta = Tensor::zeros(1, 1, 1, 1);
        let mut rm = Tensor::zeros(1, 1, 1, 1);
        let mut rv = Tensor::from_vec(1, 1, 1, 1, vec![1.0]).unwrap();
        let (y, _) =
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, 1e-5, BnMode::Train).unwrap();
        for v in y.data {
            assert_eq!(v, 0.0);
        }
        // running stats moved toward the batch stats
        assert!((rm.data[0] - 0.5).abs() < 1e-6);
        assert!((rv.data[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn batchnorm_standardized_fixed_point() {
        // batch mean 0 variance 1 per channel
        let x = Tensor::from_vec(1, 1, 1, 4, vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let gamma = Tensor::from_vec(1, 1, 1, 1, vec![1.0]).unwrap();
        let beta = Tensor::zeros(1, 1, 1, 1);
        let mut rm = Tensor::zeros(1, 1, 1, 1);
        let mut rv = Tensor::zeros(1, 1, 1, 1);
        let (y, _) =
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, 1e-8, BnMode::Train).unwrap();
        for (a, b) in y.data.iter().zip(&x.data) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let x = Tensor::from_vec(1, 1, 1, 2, vec![3.0, 5.0]).unwrap();
        let gamma = Tensor::from_vec(1, 1, 1, 1, vec![2.0]).unwrap();
        let beta = Tensor::from_vec(1, 1, 1, 1, vec![1.0]).unwrap();
        let mut rm = Tensor::from_vec(1, 1, 1, 1, vec![4.0]).unwrap();
        let mut rv = Tensor::from_vec(1, 1, 1, 1, vec![4.0]).unwrap();
        let (y, _) =
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, 0.0, BnMode::Eval).unwrap();
        assert!((y.data[0] - 0.0).abs() < 1e-6);
        assert!((y.data[1] - 2.0).abs() < 1e-6);
        // eval mode must not touch running stats
        assert_eq!(rm.data[0], 4.0);
        assert_eq!(rv.data[0], 4.0);
    }
}
