use super::Tensor;
use crate::error::{bail, Result};
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| alloc::vec![0.0; p.len()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        bail!(Contract, "adam: {} params, {} grads, {} moment slots", params.len(), grads.len(), state.m.len());
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.len() {
            bail!(Contract, "adam: parameter {i} has shape {:?}, gradient {:?}", p.shape(), g.shape());
        }
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let c1 = 1.0 - libm::pow(beta1, state.step as f64);
    let c2 = 1.0 - libm::pow(beta2, state.step as f64);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
            *pv -= lr * (m[j] / c1) / (libm::sqrt(v[j] / c2) + eps);
        }
    }
    Ok(())
}
