use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Gradients are read from each tensor and
/// cleared afterwards; a tensor without a gradient is treated as having a
/// zero gradient.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::dim("adam_step", &[params.len()], &[state.m.len()]));
    }
    for (p, m) in params.iter().zip(&state.m) {
        if p.len() != m.len() {
            return Err(Error::dim("adam_step", p.shape(), &[m.len()]));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t);
    for (i, p) in params.iter_mut().enumerate() {
        let Some(g) = p.grad().map(|g| g.to_vec()) else {
            // moments still decay
            state.m[i].iter_mut().for_each(|m| *m *= cfg.beta1);
            state.v[i].iter_mut().for_each(|v| *v *= cfg.beta2);
            apply(p, &state.m[i], &state.v[i], cfg, bc1, bc2);
            continue;
        };
        for ((m, v), gj) in state.m[i].iter_mut().zip(state.v[i].iter_mut()).zip(&g) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gj;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gj * gj;
        }
        apply(p, &state.m[i], &state.v[i], cfg, bc1, bc2);
        p.zero_grad();
    }
    Ok(())
}

fn apply(p: &mut Tensor, m: &[f64], v: &[f64], cfg: &AdamConfig, bc1: f64, bc2: f64) {
    for ((x, m), v) in p.data_mut().iter_mut().zip(m).zip(v) {
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        *x -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
    }
}
