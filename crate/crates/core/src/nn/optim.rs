//! Adam with bias correction.

use super::tensor::{AdamState, ParameterStore};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// One Adam update over every parameter from the accumulated gradients.
/// Aborts on a non-finite gradient, naming the offending parameter.
pub fn adam_step(store: &mut ParameterStore, config: &AdamConfig) -> Result<()> {
    for (name, grad) in &store.grads {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter `{name}`"
            )));
        }
    }
    store.step += 1;
    let t = store.step as f64;
    let bc1 = 1.0 - config.beta1.powf(t);
    let bc2 = 1.0 - config.beta2.powf(t);
    for (name, tensor) in store.params.iter_mut() {
        let grad = &store.grads[name];
        let state = store
            .adam
            .entry(name.clone())
            .or_insert_with(|| AdamState {
                m: vec![0.0; grad.len()],
                v: vec![0.0; grad.len()],
            });
        for i in 0..grad.len() {
            let g = grad[i];
            state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
            state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
            let m_hat = state.m[i] / bc1;
            let v_hat = state.v[i] / bc2;
            tensor.data[i] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}
