use serde::{Deserialize, Serialize};

use super::mlp::{Gradient, ParamSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment accumulators for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Gradient,
    pub second_moment: Gradient,
    pub step: u64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        Self {
            first_moment: Gradient::zeros_for(params),
            second_moment: Gradient::zeros_for(params),
            step: 0,
            config,
        }
    }
}

/// One bias-corrected Adam descent step. A gradient with any non-finite entry is
/// refused and leaves both `params` and `state` untouched.
pub fn adam_step(params: &mut ParamSet, grad: &Gradient, state: &mut OptimizerState) -> Result<()> {
    if !grad.matches(params)
        || !state.first_moment.matches(params)
        || !state.second_moment.matches(params)
    {
        return Err(Error::Shape("adam: gradient/state/parameter shapes differ".into()));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("adam gradient".into()));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let moments = state
        .first_moment
        .values_mut()
        .zip(state.second_moment.values_mut());
    for ((p, g), (m, v)) in params.values_mut().zip(grad.values()).zip(moments) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
