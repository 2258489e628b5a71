use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// `0.5·lr0·(1 + cos(π·epoch/max_epochs))`, applied once per epoch.
pub fn cosine_lr(epoch: usize, max_epochs: usize, lr0: f64) -> Result<f64> {
    if max_epochs == 0 || epoch > max_epochs {
        bail!(Usage, "cosine schedule: epoch {epoch} outside [0, {max_epochs}]");
    }
    Ok(0.5 * lr0 * (1.0 + (PI * epoch as f64 / max_epochs as f64).cos()))
}

/// `v ← μ·v + g`, then `p ← p − lr·v`.
pub fn sgd_momentum_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Steps taken so far.
    pub t: u32,
}

impl AdamMoments {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// Bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamMoments, lr: f64, beta1: f64, beta2: f64, eps: f64) {
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    SgdMomentum {
        lr0: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        lr0: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::SgdMomentum { lr0: 0.01, momentum: 0.9 }
    }
}

impl OptimizerConfig {
    pub fn lr0(&self) -> f64 {
        match *self {
            OptimizerConfig::SgdMomentum { lr0, .. } | OptimizerConfig::Adam { lr0, .. } => lr0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr0 = self.lr0();
        if !(lr0 > 0.0 && lr0.is_finite()) {
            bail!(Config, "optimizer lr0 must be positive, got {lr0}");
        }
        match *self {
            OptimizerConfig::SgdMomentum { momentum, .. } if !(0.0..1.0).contains(&momentum) => {
                bail!(Config, "momentum must lie in [0, 1), got {momentum}")
            }
            OptimizerConfig::Adam { beta1, beta2, eps, .. }
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) =>
            {
                bail!(Config, "adam needs betas in [0, 1) and eps > 0")
            }
            _ => Ok(()),
        }
    }

    /// Fresh per-parameter state for tensors of the given lengths.
    pub fn init(&self, lens: &[usize]) -> Optimizer {
        let state = match self {
            OptimizerConfig::SgdMomentum { .. } => State::Sgd(lens.iter().map(|&n| vec![0.0; n]).collect()),
            OptimizerConfig::Adam { .. } => State::Adam(lens.iter().map(|&n| AdamMoments::new(n)).collect()),
        };
        Optimizer { config: self.clone(), state }
    }
}

#[derive(Debug, Clone)]
enum State {
    Sgd(Vec<Vec<f64>>),
    Adam(Vec<AdamMoments>),
}

/// An optimizer with state for an ordered list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: State,
}

impl Optimizer {
    /// Updates parameter `index` in place.
    pub fn step(&mut self, index: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        match (&self.config, &mut self.state) {
            (&OptimizerConfig::SgdMomentum { momentum, .. }, State::Sgd(v)) => {
                sgd_momentum_step(params, grads, &mut v[index], lr, momentum)
            }
            (&OptimizerConfig::Adam { beta1, beta2, eps, .. }, State::Adam(s)) => {
                adam_step(params, grads, &mut s[index], lr, beta1, beta2, eps)
            }
            _ => unreachable!("optimizer state matches its config"),
        }
    }
}
