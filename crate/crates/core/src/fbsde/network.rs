use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{prefixed, AffineLayer, Lstm, Module};
use crate::rng::StreamKey;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden: usize,
    pub layers: usize,
    /// Make `V_x` at the first step a free parameter instead of an LSTM output.
    pub trainable_vx0: bool,
    pub v0_init: f64,
    /// The LSTM sees `(x − input_shift) ⊙ input_scale`; empty means identity.
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// Fixed elementwise multipliers on the `V_x` and Hessian-column head
    /// outputs; empty means identity.
    pub vx_scale: Vec<f64>,
    pub hess_scale: Vec<f64>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: 16,
            layers: 2,
            trainable_vx0: false,
            v0_init: 0.0,
            input_shift: Vec::new(),
            input_scale: Vec::new(),
            vx_scale: Vec::new(),
            hess_scale: Vec::new(),
        }
    }
}

impl NetworkConfig {
    /// Every per-coordinate vector is empty or has one entry per state.
    pub fn check_state_dim(&self, state_dim: usize) -> Result<()> {
        let fields = [
            ("input_shift", &self.input_shift),
            ("input_scale", &self.input_scale),
            ("vx_scale", &self.vx_scale),
            ("hess_scale", &self.hess_scale),
        ];
        for (name, v) in fields {
            if !v.is_empty() && v.len() != state_dim {
                return Err(Error::Config(format!(
                    "network.{name}: has {} entries, state has {state_dim}",
                    v.len()
                )));
            }
        }
        Ok(())
    }
}

/// LSTM trunk with a `V_x` head, an optional Hessian-column head, and the
/// trainable initial value `V₀`.
pub struct FbsdeNetwork {
    lstm: Lstm,
    vx_head: AffineLayer,
    hess_head: Option<AffineLayer>,
    pub v0: Tensor,
    vx0: Option<Tensor>,
    shift: Tensor,
    scale: Tensor,
    vx_scale: Tensor,
    hess_scale: Tensor,
    steps_taken: usize,
}

/// Network outputs at one time step, each `[batch × n]`.
pub struct ValueGradient {
    pub vx: Tensor,
    pub hess_col: Option<Tensor>,
}

impl FbsdeNetwork {
    pub fn new(state_dim: usize, hessian_head: bool, cfg: &NetworkConfig, key: StreamKey) -> Result<Self> {
        cfg.check_state_dim(state_dim)?;
        let affine = |v: &[f64], fill: f64| match v.len() {
            0 => Tensor::full(&[state_dim], fill),
            _ => Tensor::vector(v.to_vec()),
        };
        if cfg.hidden == 0 || cfg.layers == 0 {
            return Err(Error::Config("network: hidden and layers must be positive".into()));
        }
        Ok(FbsdeNetwork {
            lstm: Lstm::new(state_dim, cfg.hidden, cfg.layers, key.domain("lstm")),
            vx_head: AffineLayer::new(cfg.hidden, state_dim, key.domain("vx_head")),
            hess_head: hessian_head.then(|| AffineLayer::new(cfg.hidden, state_dim, key.domain("hess_head"))),
            v0: Tensor::param(vec![cfg.v0_init], &[1])?,
            vx0: if cfg.trainable_vx0 {
                Some(Tensor::param(vec![0.0; state_dim], &[state_dim])?)
            } else {
                None
            },
            shift: affine(&cfg.input_shift, 0.0),
            scale: affine(&cfg.input_scale, 1.0),
            vx_scale: affine(&cfg.vx_scale, 1.0),
            hess_scale: affine(&cfg.hess_scale, 1.0),
            steps_taken: 0,
        })
    }

    pub fn reset(&mut self, batch: usize) {
        self.lstm.reset(batch);
        self.steps_taken = 0;
    }

    pub fn step(&mut self, x: &Tensor) -> Result<ValueGradient> {
        let h = self.lstm.step(&x.sub(&self.shift)?.mul(&self.scale)?)?;
        let first = self.steps_taken == 0;
        self.steps_taken += 1;
        let vx = match (&self.vx0, first) {
            (Some(v), true) => v.expand(&[x.shape()[0], v.numel()])?,
            _ => self.vx_head.forward(&h)?.mul(&self.vx_scale)?,
        };
        let hess_col = match &self.hess_head {
            Some(l) => Some(l.forward(&h)?.mul(&self.hess_scale)?),
            None => None,
        };
        Ok(ValueGradient { vx, hess_col })
    }
}

impl Module for FbsdeNetwork {
    fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = prefixed("lstm", self.lstm.parameters());
        out.extend(prefixed("vx_head", self.vx_head.parameters()));
        if let Some(h) = &self.hess_head {
            out.extend(prefixed("hess_head", h.parameters()));
        }
        out.push(("v0".into(), self.v0.clone()));
        if let Some(v) = &self.vx0 {
            out.push(("vx0".into(), v.clone()));
        }
        out
    }
}
