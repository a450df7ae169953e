//! 2-D convolution (cross-correlation convention, no kernel flip) with an
//! im2col lowering. Forward and backward both accumulate per output element
//! in a fixed order, so results are bitwise deterministic.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

/// Output extent along one axis: floor((in + 2p - d(k-1) - 1)/s) + 1.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * pad;
    if padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

fn check_shapes(input: &Tensor, weight: &Tensor, bias: &Tensor, spec: &Conv2dSpec) -> Result<(usize, usize)> {
    if input.c != spec.in_channels {
        return Err(Error::DimensionMismatch(format!(
            "conv input channels {} != expected {}",
            input.c, spec.in_channels
        )));
    }
    if weight.shape() != (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel) {
        return Err(Error::DimensionMismatch(format!(
            "conv weight shape {:?} != ({}, {}, {}, {})",
            weight.shape(),
            spec.out_channels,
            spec.in_channels,
            spec.kernel,
            spec.kernel
        )));
    }
    if bias.len() != spec.out_channels {
        return Err(Error::DimensionMismatch(format!(
            "conv bias length {} != out channels {}",
            bias.len(),
            spec.out_channels
        )));
    }
    let oh = conv_out_dim(input.h, spec.kernel, spec.stride, spec.pad, spec.dilation);
    let ow = conv_out_dim(input.w, spec.kernel, spec.stride, spec.pad, spec.dilation);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
        _ => Err(Error::DimensionMismatch(format!(
            "conv input {}x{} too small for kernel {} stride {} pad {} dilation {}",
            input.h, input.w, spec.kernel, spec.stride, spec.pad, spec.dilation
        ))),
    }
}

/// Lower one image of the batch into the (C·k·k) × (oh·ow) column matrix.
fn im2col(input: &Tensor, n: usize, spec: &Conv2dSpec, oh: usize, ow: usize, col: &mut [f32]) {
    let k = spec.kernel;
    let (h, w) = (input.h, input.w);
    let plane = oh * ow;
    col.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..input.c {
        let src_base = (n * input.c + c) * h * w;
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * plane;
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = src_base + iy as usize * w;
                    let dst_row = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            col[dst_row + ox] = input.data[src_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter a column-matrix gradient back onto the input image.
fn col2im(dcol: &[f32], dinput: &mut Tensor, n: usize, spec: &Conv2dSpec, oh: usize, ow: usize) {
    let k = spec.kernel;
    let (h, w) = (dinput.h, dinput.w);
    let plane = oh * ow;
    for c in 0..dinput.c {
        let dst_base = (n * dinput.c + c) * h * w;
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * plane;
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = dst_base + iy as usize * w;
                    let src_row = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dinput.data[dst_row + ix as usize] += dcol[src_row + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, spec: &Conv2dSpec) -> Result<Tensor> {
    let (oh, ow) = check_shapes(input, weight, bias, spec)?;
    let plane = oh * ow;
    let rows = spec.in_channels * spec.kernel * spec.kernel;
    let mut col = vec![0.0f32; rows * plane];
    let mut out = Tensor::zeros(input.n, spec.out_channels, oh, ow);
    for n in 0..input.n {
        im2col(input, n, spec, oh, ow, &mut col);
        for oc in 0..spec.out_channels {
            let dst = (n * spec.out_channels + oc) * plane;
            let out_row = &mut out.data[dst..dst + plane];
            out_row.iter_mut().for_each(|v| *v = bias.data[oc]);
            let w_row = &weight.data[oc * rows..(oc + 1) * rows];
            for (r, &wv) in w_row.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                let col_row = &col[r * plane..(r + 1) * plane];
                for (o, &cv) in out_row.iter_mut().zip(col_row) {
                    *o += wv * cv;
                }
            }
        }
    }
    Ok(out)
}

/// Backward pass. Returns (input grad, weight grad, bias grad).
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    dout: &Tensor,
    spec: &Conv2dSpec,
) -> Result<(Tensor, Tensor, Tensor)> {
    let rows = spec.in_channels * spec.kernel * spec.kernel;
    let oh = dout.h;
    let ow = dout.w;
    let plane = oh * ow;
    if dout.c != spec.out_channels || dout.n != input.n {
        return Err(Error::DimensionMismatch(format!(
            "conv output grad shape {:?} inconsistent with input {:?}",
            dout.shape(),
            input.shape()
        )));
    }
    let mut dinput = Tensor::zeros(input.n, input.c, input.h, input.w);
    let mut dweight = Tensor::zeros(weight.n, weight.c, weight.h, weight.w);
    let mut dbias = Tensor::zeros(1, spec.out_channels, 1, 1);
    let mut col = vec![0.0f32; rows * plane];
    let mut dcol = vec![0.0f32; rows * plane];
    for n in 0..input.n {
        im2col(input, n, spec, oh, ow, &mut col);
        dcol.iter_mut().for_each(|v| *v = 0.0);
        for oc in 0..spec.out_channels {
            let src = (n * spec.out_channels + oc) * plane;
            let dout_row = &dout.data[src..src + plane];
            dbias.data[oc] += dout_row.iter().sum::<f32>();
            for r in 0..rows {
                let col_row = &col[r * plane..(r + 1) * plane];
                let mut acc = 0.0f32;
                for (d, c) in dout_row.iter().zip(col_row) {
                    acc += d * c;
                }
                dweight.data[oc * rows + r] += acc;
                let wv = weight.data[oc * rows + r];
                if wv != 0.0 {
                    let dcol_row = &mut dcol[r * plane..(r + 1) * plane];
                    for (dc, d) in dcol_row.iter_mut().zip(dout_row) {
                        *dc += wv * d;
                    }
                }
            }
        }
        col2im(&dcol, &mut dinput, n, spec, oh, ow);
    }
    Ok((dinput, dweight, dbias))
}
