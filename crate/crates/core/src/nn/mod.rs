//! Affine layers, MLPs, LSTM cells, Adam, and the two regression losses.

mod adam;
mod affine;
mod lstm;

pub use adam::{Adam, AdamConfig, AdamState};
pub use affine::{AffineLayer, Mlp};
pub use lstm::{Lstm, LstmCell};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Softplus,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, z: &Tensor) -> Tensor {
        match self {
            Activation::Identity => z.clone(),
            Activation::Softplus => z.softplus(),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => z.sigmoid(),
            Activation::Relu => z.max_scalar(0.0),
        }
    }

    /// Derivative evaluated at pre-activation `z`, itself on the tape.
    pub fn derivative(self, z: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Activation::Identity => Tensor::ones(z.shape()),
            Activation::Softplus => z.sigmoid(),
            Activation::Tanh => Tensor::ones(&[]).sub(&z.tanh().square())?,
            Activation::Sigmoid => {
                let s = z.sigmoid();
                s.mul(&Tensor::ones(&[]).sub(&s)?)?
            }
            Activation::Relu => {
                let mask = z.data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
                Tensor::new(mask, z.shape())?
            }
        })
    }
}

/// Serializable copy of one named parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Anything owning named, grad-enabled parameters.
pub trait Module {
    fn parameters(&self) -> Vec<(String, Tensor)>;

    fn zero_grad(&self) {
        for (_, p) in self.parameters() {
            p.zero_grad();
        }
    }

    fn snapshot(&self) -> Vec<ParamSnapshot> {
        self.parameters()
            .into_iter()
            .map(|(name, t)| ParamSnapshot {
                name,
                shape: t.shape().to_vec(),
                data: t.to_vec(),
            })
            .collect()
    }

    /// Overwrite parameters from a snapshot. Names and shapes must match.
    fn load(&self, snapshot: &[ParamSnapshot]) -> Result<()> {
        let params = self.parameters();
        if params.len() != snapshot.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, snapshot has {}",
                params.len(),
                snapshot.len()
            )));
        }
        for ((name, t), s) in params.iter().zip(snapshot) {
            if *name != s.name || t.shape() != s.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: `{name}` {:?} vs `{}` {:?}",
                    t.shape(),
                    s.name,
                    s.shape
                )));
            }
            t.update_data(|d| d.copy_from_slice(&s.data));
        }
        Ok(())
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn prefixed(prefix: &str, params: Vec<(String, Tensor)>) -> Vec<(String, Tensor)> {
    params
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

/// Grad-enabled tensor with entries uniform in `±bound`.
pub(crate) fn uniform_param(key: StreamKey, shape: &[usize], bound: f64) -> Tensor {
    let mut rng = key.rng();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::param(data, shape).expect("shape matches data")
}

/// Mean squared error over all elements.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok(pred.sub(target)?.square().mean_all())
}

/// Batch mean of the elementwise Huber-type penalty, summed over any
/// trailing component axes. The first axis is the batch.
pub fn huber(a: &Tensor, delta: f64) -> Result<Tensor> {
    let h = a.huber(delta)?;
    let batch = a.shape().first().copied().unwrap_or(1).max(1);
    Ok(h.sum_all().mul_scalar(1.0 / batch as f64))
}

/// Clear the tape and every gradient held by `module`.
pub fn reset_step(module: &dyn Module) {
    tensor::clear_tape();
    module.zero_grad();
}
