use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Update counts at which the learning rate is multiplied by `decay_factor`.
    pub decay_steps: Vec<u64>,
    pub decay_factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_steps: Vec::new(),
            decay_factor: 0.1,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }

    /// Learning rate in force for the update that follows `step` completed updates.
    pub fn lr_at(&self, step: u64) -> f64 {
        let decays = self.decay_steps.iter().filter(|&&s| step >= s).count();
        self.lr * self.decay_factor.powi(decays as i32)
    }
}

/// Moment estimates and update count; what a checkpoint needs to resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

pub struct Adam {
    params: Vec<(String, Tensor)>,
    config: AdamConfig,
    state: AdamState,
}

impl Adam {
    pub fn new(params: Vec<(String, Tensor)>, config: AdamConfig) -> Self {
        let first = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        let second = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Adam {
            params,
            config,
            state: AdamState {
                step: 0,
                first,
                second,
            },
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn set_state(&mut self, state: AdamState) -> Result<()> {
        let shapes_ok = state.first.len() == self.params.len()
            && state.second.len() == self.params.len()
            && self
                .params
                .iter()
                .zip(state.first.iter().zip(&state.second))
                .all(|((_, p), (m, v))| m.len() == p.numel() && v.len() == p.numel());
        if !shapes_ok {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        self.state = state;
        Ok(())
    }

    pub fn current_lr(&self) -> f64 {
        self.config.lr_at(self.state.step)
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|(_, p)| p.zero_grad());
    }

    /// One bias-corrected Adam update from the gradients currently held by
    /// the parameters. Parameters without a gradient see a zero gradient.
    pub fn step(&mut self) -> Result<()> {
        for (name, p) in &self.params {
            if let Some(g) = p.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(name.clone()));
                }
            }
        }
        let lr = self.current_lr();
        self.state.step += 1;
        let t = self.state.step as i32;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, (_, p)) in self.params.iter().enumerate() {
            let g = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            let m = &mut self.state.first[k];
            let v = &mut self.state.second[k];
            p.update_data(|d| {
                for i in 0..d.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    d[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}
