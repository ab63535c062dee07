//! Adam optimizer with a multi-step learning-rate schedule and optional
//! l1 weight regularization folded into the gradient.

use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserParams;
use crate::error::{Error, Result};

/// Multi-step schedule: the base rate is multiplied by `decay` at every
/// milestone epoch that has been reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl LrSchedule {
    /// Schedule used when fitting a network locally per scan.
    pub fn local() -> Self {
        Self {
            base: 6e-5,
            milestones: vec![100, 150],
            decay: 0.65,
        }
    }

    /// Schedule used when training one network over the full dataset.
    pub fn global() -> Self {
        Self {
            base: 1e-4,
            milestones: vec![50, 100],
            decay: 0.6,
        }
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        let hits = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base * self.decay.powi(hits as i32)
    }
}

/// First/second moment estimates shaped like the parameters, plus the step
/// counter and schedule.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: DenoiserParams,
    pub v: DenoiserParams,
    pub step: u64,
    /// Current epoch, used to look up the scheduled learning rate. The
    /// training loop advances this.
    pub epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl AdamState {
    pub fn new(like: &DenoiserParams, schedule: LrSchedule) -> Self {
        let mut zeros = like.clone();
        zeros.scale(0.0);
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            epoch: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
        }
    }
}

/// One Adam update. Gradients are first augmented by `l1_weight *
/// sign(theta)` (with `sign(0) = 0`), then the standard bias-corrected
/// update is applied at the scheduled rate for the state's current epoch.
pub fn adam_step(
    params: &mut DenoiserParams,
    grads: &DenoiserParams,
    state: &mut AdamState,
    l1_weight: f64,
) -> Result<()> {
    if params.layers.len() != grads.layers.len() || params.layers.len() != state.m.layers.len() {
        return Err(Error::shape("optimizer state does not match parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = state.schedule.rate_at(state.epoch);
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    for (((theta, g), m), v) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        if theta.len() != g.len() {
            return Err(Error::shape("gradient tensor shape mismatch"));
        }
        for i in 0..theta.len() {
            let grad = g[i] + l1_weight * sign(theta[i]);
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad * grad;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
