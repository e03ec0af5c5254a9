//! Learning-rate schedule and parameter updates.

use crate::error::{invalid, Result};
use crate::tensor::Tensor;
use crate::TensorError;

/// Exponent of the poly schedule.
pub const POLY_POWER: f64 = 0.9;

/// `γ₀ (1 − n/N)^0.9`.
pub fn poly_lr(base: f64, n: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(invalid("poly_lr", "total iterations must be positive"));
    }
    if n > total {
        return Err(invalid("poly_lr", format!("iteration {n} beyond {total}")));
    }
    Ok(base * (1.0 - n as f64 / total as f64).powf(POLY_POWER))
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

/// `θ ← θ − lr·(g + wd·θ)`.
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, lr: f64, weight_decay: f64) -> Result<()> {
    same_shape("sgd_step", param, grad)?;
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * (g + weight_decay * *p);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moments of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl AdamState {
    pub fn new(like: &Tensor) -> Self {
        Self {
            m: Tensor::zeros(like.shape()),
            v: Tensor::zeros(like.shape()),
            step: 0,
        }
    }
}

impl AdamW {
    /// One bias-corrected Adam update with decoupled weight decay
    /// `θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + eps)`.
    pub fn step(&self, param: &mut Tensor, grad: &Tensor, state: &mut AdamState, lr: f64) -> Result<()> {
        same_shape("adamw_step", param, grad)?;
        same_shape("adamw_step", param, &state.m)?;
        same_shape("adamw_step", param, &state.v)?;
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (m, v) = (state.m.data_mut(), state.v.data_mut());
        for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *p -= lr * self.weight_decay * *p;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
