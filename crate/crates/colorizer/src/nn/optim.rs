//! SGD-with-momentum and Adam parameter updates over named parameter lists.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimKind {
    Sgd { momentum: f32 },
    Adam { beta1: f32, beta2: f32, eps: f32 },
}

impl OptimKind {
    pub fn adam_default() -> Self {
        OptimKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f32,
}

/// Per-parameter moment buffers plus the global step counter.
#[derive(Debug, Clone, Default)]
pub struct OptimState {
    /// first moment (Adam) or velocity (SGD), one buffer per parameter
    pub m: Vec<Vec<f32>>,
    /// second moment (Adam only)
    pub v: Vec<Vec<f32>>,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }
}

/// Apply one update to every parameter from its gradient buffer.
/// Parameters without a gradient buffer are left untouched.
pub fn optimizer_step(
    params: &mut [&mut Tensor],
    state: &mut OptimState,
    config: &OptimConfig,
) -> Result<()> {
    if config.lr <= 0.0 {
        return Err(Error::Config(format!(
            "learning rate must be > 0, got {}",
            config.lr
        )));
    }
    if state.m.len() != params.len() {
        return Err(Error::Config(format!(
            "optimizer state holds {} buffers for {} parameters",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    for (pi, p) in params.iter_mut().enumerate() {
        let Some(grad) = p.grad.take() else { continue };
        match config.kind {
            OptimKind::Sgd { momentum } => {
                let vel = &mut state.m[pi];
                for i in 0..grad.len() {
                    vel[i] = momentum * vel[i] + grad[i];
                    p.data[i] -= config.lr * vel[i];
                }
            }
            OptimKind::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(state.step as i32);
                let bc2 = 1.0 - beta2.powi(state.step as i32);
                let m = &mut state.m[pi];
                let v = &mut state.v[pi];
                for i in 0..grad.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    p.data[i] -= config.lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        p.grad = Some(grad);
        p.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: Vec<f32>, grads: Vec<f32>) -> Tensor {
        let n = values.len();
        let mut t = Tensor::from_vec(1, 1, 1, n, values).unwrap();
        t.grad = Some(grads);
        t
    }

    #[test]
    fn sgd_basic_step() {
        let mut w = param(vec![1.0], vec![1.0]);
        let mut state = OptimState::new(&[&w]);
        let cfg = OptimConfig {
            kind: OptimKind::Sgd { momentum: 0.0 },
            lr: 0.1,
        };
        optimizer_step(&mut [&mut w], &mut state, &cfg).unwrap();
        assert!((w.data[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut w = param(vec![2.5, -1.0], vec![0.0, 0.0]);
        let mut state = OptimState::new(&[&w]);
        let cfg = OptimConfig {
            kind: OptimKind::Sgd { momentum: 0.0 },
            lr: 0.5,
        };
        optimizer_step(&mut [&mut w], &mut state, &cfg).unwrap();
        assert_eq!(w.data, vec![2.5, -1.0]);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // Bias correction makes the first step ~lr no matter the gradient scale.
        for g in [1e-4f32, 1.0, 1e4] {
            let mut w = param(vec![0.0], vec![g]);
            let mut state = OptimState::new(&[&w]);
            let cfg = OptimConfig {
                kind: OptimKind::adam_default(),
                lr: 0.01,
            };
            optimizer_step(&mut [&mut w], &mut state, &cfg).unwrap();
            assert!(
                (w.data[0].abs() - 0.01).abs() < 1e-4,
                "grad {g} gave step {}",
                w.data[0]
            );
        }
    }

    #[test]
    fn momentum_accumulates() {
        let mut w = param(vec![0.0], vec![1.0]);
        let mut state = OptimState::new(&[&w]);
        let cfg = OptimConfig {
            kind: OptimKind::Sgd { momentum: 0.5 },
            lr: 1.0,
        };
        optimizer_step(&mut [&mut w], &mut state, &cfg).unwrap();
        assert!((w.data[0] + 1.0).abs() < 1e-7);
        w.grad_mut()[0] = 1.0;
        optimizer_step(&mut [&mut w], &mut state, &cfg).unwrap();
        // velocity = 0.5 * 1 + 1 = 1.5, total -2.5
        assert!((w.data[0] + 2.5).abs() < 1e-7);
    }

    #[test]
    fn bad_lr_rejected() {
        let mut w = param(vec![0.0], vec![1.0]);
        let mut state = OptimState::new(&[&w]);
        let cfg = OptimConfig {
            kind: OptimKind::adam_default(),
            lr: 0.0,
        };
        assert!(matches!(
            optimizer_step(&mut [&mut w], &mut state, &cfg),
            Err(Error::Config(_))
        ));
    }
}
