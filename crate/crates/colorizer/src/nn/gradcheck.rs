//! Central finite-difference gradient checking for every kernel with a
//! hand-written backward pass. The numeric side accumulates in double
//! precision; analytic backward passes are checked against it through a
//! fixed random projection of the output.

use super::conv::{conv2d_backward, conv2d_forward, Conv2dSpec};
use super::layers::{
    batchnorm_backward, batchnorm_forward, relu_backward, relu_forward, tanh_backward,
    tanh_forward, upsample_backward, upsample_forward, BnMode, UpsampleMode,
};
use super::loss::{euclidean_loss, softmax_cross_entropy};
use super::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn random_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let data = (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(n, c, h, w, data).unwrap()
}

/// Positive-bounded random tensor. Used to probe linear kernels: with all
/// inputs, weights and projection coefficients bounded away from zero the
/// analytic gradients stay well above the f32 forward noise floor.
fn positive_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let data = (0..n * c * h * w).map(|_| rng.gen_range(0.2..1.0)).collect();
    Tensor::from_vec(n, c, h, w, data).unwrap()
}

/// Check an op given its forward and backward as closures over a list of
/// differentiable inputs (data input plus parameters). The scalar objective
/// is a fixed random projection of the output, drawn from `proj_range`.
pub fn check_op<F, B>(
    inputs: &[Tensor],
    forward: F,
    backward: B,
    eps: f64,
    proj_range: (f32, f32),
    seed: u64,
) -> f64
where
    F: Fn(&[Tensor]) -> Tensor,
    B: Fn(&[Tensor], &Tensor) -> Vec<Tensor>,
{
    let out0 = forward(inputs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut proj = out0.clone();
    for v in &mut proj.data {
        *v = rng.gen_range(proj_range.0..proj_range.1);
    }
    let objective = |ins: &[Tensor]| -> f64 {
        let out = forward(ins);
        out.data
            .iter()
            .zip(&proj.data)
            .map(|(&o, &c)| o as f64 * c as f64)
            .sum()
    };
    let analytic = backward(inputs, &proj);
    assert_eq!(analytic.len(), inputs.len(), "backward arity mismatch");

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_err = 0.0f64;
    for (ti, grad) in analytic.iter().enumerate() {
        for j in 0..work[ti].len() {
            let orig = work[ti].data[j];
            work[ti].data[j] = orig + eps as f32;
            let plus = objective(&work);
            work[ti].data[j] = orig - eps as f32;
            let minus = objective(&work);
            work[ti].data[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            max_err = max_err.max(rel_error(grad.data[j] as f64, numeric));
        }
    }
    max_err
}

/// Check a scalar loss whose implementation returns (loss, grad) directly.
pub fn check_scalar_loss<F>(inputs: &[Tensor], f: F, eps: f64) -> f64
where
    F: Fn(&[Tensor]) -> (f64, Vec<Tensor>),
{
    let (_, analytic) = f(inputs);
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_err = 0.0f64;
    for (ti, grad) in analytic.iter().enumerate() {
        for j in 0..work[ti].len() {
            let orig = work[ti].data[j];
            work[ti].data[j] = orig + eps as f32;
            let (plus, _) = f(&work);
            work[ti].data[j] = orig - eps as f32;
            let (minus, _) = f(&work);
            work[ti].data[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            max_err = max_err.max(rel_error(grad.data[j] as f64, numeric));
        }
    }
    max_err
}

fn check_conv(stride: usize, pad: usize, dilation: usize, rng: &mut ChaCha8Rng) -> f64 {
    let spec = Conv2dSpec {
        in_channels: 2,
        out_channels: 3,
        kernel: 3,
        stride,
        pad,
        dilation,
    };
    // conv is linear in every argument, so central differences carry no
    // truncation error and a large step keeps the noise floor low
    let input = positive_tensor(rng, 2, 2, 6, 7);
    let weight = positive_tensor(rng, 3, 2, 3, 3);
    let bias = positive_tensor(rng, 1, 3, 1, 1);
    check_op(
        &[input, weight, bias],
        |ins| conv2d_forward(&ins[0], &ins[1], &ins[2], &spec).unwrap(),
        |ins, dout| {
            let (di, dw, db) = conv2d_backward(&ins[0], &ins[1], dout, &spec).unwrap();
            vec![di, dw, db]
        },
        5e-2,
        (0.2, 1.0),
        11,
    )
}

fn check_relu(rng: &mut ChaCha8Rng) -> f64 {
    // keep inputs bounded away from the kink at 0
    let mut input = random_tensor(rng, 2, 3, 4, 4);
    for v in &mut input.data {
        if v.abs() < 0.05 {
            *v = 0.05 * v.signum().max(0.5);
        }
    }
    check_op(
        &[input],
        |ins| relu_forward(&ins[0]),
        |ins, dout| vec![relu_backward(&ins[0], dout)],
        1e-3,
        (0.2, 1.0),
        12,
    )
}

fn check_tanh(rng: &mut ChaCha8Rng) -> f64 {
    let input = random_tensor(rng, 1, 2, 4, 4);
    check_op(
        &[input],
        |ins| tanh_forward(&ins[0]),
        |ins, dout| {
            let y = tanh_forward(&ins[0]);
            vec![tanh_backward(&y, dout)]
        },
        5e-3,
        (0.2, 1.0),
        13,
    )
}

fn check_upsample(mode: UpsampleMode, rng: &mut ChaCha8Rng) -> f64 {
    let input = random_tensor(rng, 1, 2, 3, 4);
    check_op(
        &[input],
        |ins| upsample_forward(&ins[0], 2, mode),
        |_, dout| vec![upsample_backward(dout, 2, mode, 3, 4)],
        5e-2,
        (0.2, 1.0),
        14,
    )
}

/// Naive double-precision batch-norm forward, the checker-side reference.
/// Keeps the finite-difference quotient free of f32 output rounding.
fn batchnorm_objective_f64(ins: &[Tensor], proj: &Tensor, eps: f64) -> f64 {
    let (input, gamma, beta) = (&ins[0], &ins[1], &ins[2]);
    let m = (input.n * input.h * input.w) as f64;
    let plane = input.h * input.w;
    let mut acc = 0.0f64;
    for c in 0..input.c {
        let mut mean = 0.0f64;
        for n in 0..input.n {
            let base = input.idx(n, c, 0, 0);
            for i in 0..plane {
                mean += input.data[base + i] as f64;
            }
        }
        mean /= m;
        let mut var = 0.0f64;
        for n in 0..input.n {
            let base = input.idx(n, c, 0, 0);
            for i in 0..plane {
                let d = input.data[base + i] as f64 - mean;
                var += d * d;
            }
        }
        var /= m;
        let istd = 1.0 / (var + eps).sqrt();
        let g = gamma.data[c] as f64;
        let b = beta.data[c] as f64;
        for n in 0..input.n {
            let base = input.idx(n, c, 0, 0);
            for i in 0..plane {
                let y = g * (input.data[base + i] as f64 - mean) * istd + b;
                acc += y * proj.data[base + i] as f64;
            }
        }
    }
    acc
}

fn check_batchnorm(rng: &mut ChaCha8Rng) -> f64 {
    const EPS_BN: f64 = 1e-5;
    let input = random_tensor(rng, 2, 3, 4, 4);
    let gamma = positive_tensor(rng, 1, 3, 1, 1);
    let beta = random_tensor(rng, 1, 3, 1, 1);
    let mut proj = Tensor::zeros(2, 3, 4, 4);
    for v in &mut proj.data {
        *v = rng.gen_range(-1.0..1.0);
    }
    check_scalar_loss(
        &[input, gamma, beta],
        |ins| {
            let mut rm = Tensor::zeros(1, 3, 1, 1);
            let mut rv = Tensor::zeros(1, 3, 1, 1);
            let (_, cache) = batchnorm_forward(
                &ins[0],
                &ins[1],
                &ins[2],
                &mut rm,
                &mut rv,
                EPS_BN as f32,
                BnMode::Train,
            )
            .unwrap();
            let (di, dg, db) = batchnorm_backward(&proj, &ins[1], &cache);
            (
                batchnorm_objective_f64(ins, &proj, EPS_BN),
                vec![di, dg, db],
            )
        },
        1e-3,
    )
}

fn check_euclidean(rng: &mut ChaCha8Rng) -> f64 {
    let pred = random_tensor(rng, 2, 2, 3, 3);
    let target = random_tensor(rng, 2, 2, 3, 3);
    check_scalar_loss(
        std::slice::from_ref(&pred),
        |ins| {
            let (loss, grad) = euclidean_loss(&ins[0], &target).unwrap();
            (loss, vec![grad])
        },
        1e-3,
    )
}

fn check_cross_entropy(rng: &mut ChaCha8Rng) -> f64 {
    let logits = random_tensor(rng, 2, 6, 2, 2);
    // random valid target distributions
    let mut target = Tensor::zeros(2, 6, 2, 2);
    for n in 0..2 {
        for p in 0..4 {
            let raw: Vec<f64> = (0..6).map(|_| rng.gen_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            for c in 0..6 {
                let i = target.idx(n, c, 0, 0) + p;
                target.data[i] = (raw[c] / sum) as f32;
            }
        }
    }
    check_scalar_loss(
        &[logits],
        |ins| {
            let (loss, grad) = softmax_cross_entropy(&ins[0], &target).unwrap();
            (loss, vec![grad])
        },
        1e-3,
    )
}

/// Run the whole checker suite: every conv stride/pad/dilation combination
/// in {1,2}×{0,1,2}×{1,2}, ReLU, tanh, both upsample modes, batchnorm in
/// train mode, and both losses.
pub fn check_all_kernels() -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC010);
    let mut reports = Vec::new();
    for stride in [1usize, 2] {
        for pad in [0usize, 1, 2] {
            for dilation in [1usize, 2] {
                reports.push(GradCheckReport {
                    name: format!("conv2d stride={stride} pad={pad} dilation={dilation}"),
                    max_rel_error: check_conv(stride, pad, dilation, &mut rng),
                });
            }
        }
    }
    reports.push(GradCheckReport {
        name: "relu".into(),
        max_rel_error: check_relu(&mut rng),
    });
    reports.push(GradCheckReport {
        name: "tanh".into(),
        max_rel_error: check_tanh(&mut rng),
    });
    reports.push(GradCheckReport {
        name: "upsample nearest".into(),
        max_rel_error: check_upsample(UpsampleMode::Nearest, &mut rng),
    });
    reports.push(GradCheckReport {
        name: "upsample bilinear".into(),
        max_rel_error: check_upsample(UpsampleMode::Bilinear, &mut rng),
    });
    reports.push(GradCheckReport {
        name: "batchnorm train".into(),
        max_rel_error: check_batchnorm(&mut rng),
    });
    reports.push(GradCheckReport {
        name: "euclidean_loss".into(),
        max_rel_error: check_euclidean(&mut rng),
    });
    reports.push(GradCheckReport {
        name: "softmax_cross_entropy".into(),
        max_rel_error: check_cross_entropy(&mut rng),
    });
    reports
}
