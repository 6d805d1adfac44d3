//! Structured prediction energy network on the scalar regression task
//! `y = x·sin(x)`: an energy `E(x, y; θ)` whose argmin over `y` is the
//! prediction, trained end to end through an inner optimizer.

mod data;
mod landscape;

pub use data::{target, DatasetConfig, RegressionDataset};
pub use landscape::{argmin_rmse, energy_landscape_grid, linspace, Landscape};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Activation, Adam, Mlp, Module};
use crate::novas::{
    cem_optimize, novas_optimize, unrolled_gd, CemConfig, DifferentiableObjective, GaussianSearchState,
    NovasConfig,
};
use crate::rng::StreamKey;
use crate::tensor::{self, Tensor};

/// A scalar energy over inputs `x` and scalar outputs `y`.
pub trait Energy {
    /// Energies of candidates `y: [B × M]` (or `[B × M × 1]`) at inputs
    /// `x: [B]`, shape `[B × M]`.
    fn energy(&self, x: &Tensor, y: &Tensor) -> Result<Tensor>;

    /// Energy `[B]` and `∂E/∂y` `[B × 1]` at `y: [B × 1]`, both on the tape.
    fn energy_and_y_gradient(&self, x: &Tensor, y: &Tensor) -> Result<(Tensor, Tensor)>;
}

/// MLP over `[x, y]` with softplus hidden layers and a scalar output.
#[derive(Clone, Debug)]
pub struct EnergyNet {
    mlp: Mlp,
}

impl EnergyNet {
    pub fn new(hidden: &[usize], key: StreamKey) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config(format!("hidden widths must be non-empty and positive, got {hidden:?}")));
        }
        let mut sizes = vec![2];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut acts = vec![Activation::Softplus; hidden.len()];
        acts.push(Activation::Identity);
        Ok(EnergyNet {
            mlp: Mlp::new(&sizes, acts, key)?,
        })
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.input_size() != 2 || mlp.output_size() != 1 {
            return Err(Error::Config(format!(
                "energy network must map 2 inputs to 1 output, got {} -> {}",
                mlp.input_size(),
                mlp.output_size()
            )));
        }
        Ok(EnergyNet { mlp })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }
}

impl Energy for EnergyNet {
    fn energy(&self, x: &Tensor, y: &Tensor) -> Result<Tensor> {
        let (b, m) = (y.shape()[0], y.shape()[1]);
        let y = y.reshape(&[b, m, 1])?;
        let xs = x.reshape(&[b, 1, 1])?.expand(&[b, m, 1])?;
        let input = Tensor::concat(&[&xs, &y], 2)?.reshape(&[b * m, 2])?;
        Ok(self.mlp.forward(&input)?.reshape(&[b, m])?)
    }

    fn energy_and_y_gradient(&self, x: &Tensor, y: &Tensor) -> Result<(Tensor, Tensor)> {
        let b = x.numel();
        let input = Tensor::concat(&[&x.reshape(&[b, 1])?, y], 1)?;
        let (value, grad) = self.mlp.value_and_input_gradient(&input)?;
        Ok((value.reshape(&[b])?, grad.slice(1, 1, 1)?))
    }
}

impl Module for EnergyNet {
    fn parameters(&self) -> Vec<(String, Tensor)> {
        nn::prefixed("energy", self.mlp.parameters())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    Novas,
    Cem,
    Gd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig { steps: 10, lr: 0.1 }
    }
}

/// Inner argmin over `y`. Only the section matching `method` is used; the
/// start point is `mu0` for every method and the CEM spread is `novas.sigma0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerConfig {
    pub method: InnerMethod,
    #[serde(default)]
    pub mu0: f64,
    #[serde(default)]
    pub novas: NovasConfig,
    #[serde(default = "default_cem")]
    pub cem: CemConfig,
    #[serde(default)]
    pub gd: GdConfig,
}

fn default_cem() -> CemConfig {
    CemConfig {
        samples: 100,
        elites: 10,
        iters: 10,
        epsilon: 1e-3,
        maximize: false,
    }
}

impl InnerConfig {
    pub fn novas(novas: NovasConfig) -> Self {
        InnerConfig {
            method: InnerMethod::Novas,
            mu0: 0.0,
            novas,
            cem: default_cem(),
            gd: GdConfig::default(),
        }
    }

    pub fn gd(steps: usize, lr: f64) -> Self {
        InnerConfig {
            method: InnerMethod::Gd,
            gd: GdConfig { steps, lr },
            ..InnerConfig::novas(NovasConfig::default())
        }
    }

    pub fn cem(cem: CemConfig) -> Self {
        InnerConfig {
            method: InnerMethod::Cem,
            cem,
            ..InnerConfig::novas(NovasConfig::default())
        }
    }

    pub fn with_sigma0(mut self, sigma0: f64) -> Self {
        self.novas.sigma0 = sigma0;
        self
    }

    /// Same method with the iteration count replaced.
    pub fn with_iterations(&self, n: usize) -> Self {
        let mut c = self.clone();
        match c.method {
            InnerMethod::Novas => c.novas.iters = n,
            InnerMethod::Cem => c.cem.iters = n,
            InnerMethod::Gd => c.gd.steps = n,
        }
        c
    }

    pub fn iterations(&self) -> usize {
        match self.method {
            InnerMethod::Novas => self.novas.iters,
            InnerMethod::Cem => self.cem.iters,
            InnerMethod::Gd => self.gd.steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu0.is_finite() {
            return Err(Error::Config("inner.mu0 must be finite".into()));
        }
        match self.method {
            InnerMethod::Novas => self.novas.validate(),
            InnerMethod::Cem => {
                self.cem.validate()?;
                if !(self.novas.sigma0 > 0.0) {
                    return Err(Error::Config("novas.sigma0 must be positive".into()));
                }
                Ok(())
            }
            InnerMethod::Gd => {
                if !self.gd.lr.is_finite() || self.gd.lr < 0.0 {
                    return Err(Error::Config(format!("gd.lr must be finite and >= 0, got {}", self.gd.lr)));
                }
                Ok(())
            }
        }
    }

    /// Whether predictions carry a gradient to the energy parameters.
    pub fn is_differentiable(&self) -> bool {
        self.method != InnerMethod::Cem
    }
}

struct GdEnergy<'a, E: ?Sized> {
    net: &'a E,
    x: &'a Tensor,
}

impl<E: Energy + ?Sized> DifferentiableObjective for GdEnergy<'_, E> {
    fn value_and_gradient(&self, y: &Tensor) -> Result<(Tensor, Tensor)> {
        self.net.energy_and_y_gradient(self.x, y)
    }
}

/// `ŷ = argmin_y E(x, y; θ)` per element of `x: [B]`, as found by the inner
/// optimizer. Output `[B]`, on the tape when recording (except for CEM).
pub fn spen_predict<E: Energy + ?Sized>(net: &E, x: &Tensor, inner: &InnerConfig, key: StreamKey) -> Result<Tensor> {
    inner.validate()?;
    let b = x.numel();
    let x = x.reshape(&[b])?;
    let y = match inner.method {
        InnerMethod::Novas => {
            let init = GaussianSearchState::isotropic(Tensor::full(&[b, 1], inner.mu0), inner.novas.sigma0)?;
            let obj = |c: &Tensor| net.energy(&x, c);
            novas_optimize(&obj, &init, &inner.novas, key)?
        }
        InnerMethod::Cem => {
            let init = GaussianSearchState::isotropic(Tensor::full(&[b, 1], inner.mu0), inner.novas.sigma0)?;
            let obj = |c: &Tensor| net.energy(&x, c);
            tensor::no_grad(|| cem_optimize(&obj, &init, &inner.cem, key))?
        }
        InnerMethod::Gd => {
            let obj = GdEnergy { net, x: &x };
            unrolled_gd(&obj, &Tensor::full(&[b, 1], inner.mu0), inner.gd.steps, inner.gd.lr)?
        }
    };
    Ok(y.reshape(&[b])?)
}

/// Mean squared error of off-tape predictions, evaluated in chunks.
pub fn prediction_loss<E: Energy + ?Sized>(
    net: &E,
    x: &[f64],
    y: &[f64],
    inner: &InnerConfig,
    key: StreamKey,
) -> Result<f64> {
    const CHUNK: usize = 256;
    if x.is_empty() {
        return Ok(0.0);
    }
    let mut sse = 0.0;
    for (i, (xc, yc)) in x.chunks(CHUNK).zip(y.chunks(CHUNK)).enumerate() {
        let pred = tensor::no_grad(|| spen_predict(net, &Tensor::vector(xc.to_vec()), inner, key.child(i as u64)))?;
        sse += pred.data().iter().zip(yc).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
    }
    Ok(sse / x.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpenTrainConfig {
    pub epochs: usize,
    pub inner: InnerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpenRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// Adam on `MSE(ŷ, y*)`, both on the model target scale. Resumes from the epoch implied by `adam`'s step
/// count; a fresh run first records the untrained losses as epoch 0, then
/// one record per finished epoch. Inner-loop noise for batch `j` of epoch
/// `e` comes from `key.domain("train").child(e).child(j)`.
pub fn train_spen(
    net: &EnergyNet,
    adam: &mut Adam,
    data: &RegressionDataset,
    cfg: &SpenTrainConfig,
    key: StreamKey,
    mut on_record: impl FnMut(&SpenRecord),
) -> Result<Vec<SpenRecord>> {
    cfg.inner.validate()?;
    if !cfg.inner.is_differentiable() {
        return Err(Error::Config(
            "CEM predictions carry no parameter gradient; train with novas or gd".into(),
        ));
    }
    let per_epoch = data.batches_per_epoch() as u64;
    let start = (adam.state().step / per_epoch.max(1)) as usize;
    let test_key = key.domain("test");
    let test_y = data.model_test_y();
    let mut records = Vec::new();
    let mut emit = |r: SpenRecord, records: &mut Vec<SpenRecord>| {
        on_record(&r);
        records.push(r);
    };
    if start == 0 {
        let train_loss = prediction_loss(net, &data.train_x, &data.model_train_y(), &cfg.inner, key.domain("initial"))?;
        let test_loss = prediction_loss(net, &data.test_x, &test_y, &cfg.inner, test_key)?;
        emit(
            SpenRecord {
                epoch: 0,
                train_loss,
                test_loss,
            },
            &mut records,
        );
    }
    for epoch in start..start + cfg.epochs {
        let mut sum = 0.0;
        let mut count = 0usize;
        let epoch_key = key.domain("train").child(epoch as u64);
        for (j, (xb, yb)) in data.batches(key.domain("shuffle").child(epoch as u64)).into_iter().enumerate() {
            nn::reset_step(net);
            let pred = spen_predict(net, &Tensor::vector(xb), &cfg.inner, epoch_key.child(j as u64))?;
            let n = yb.len();
            let loss = nn::mse(&pred, &Tensor::vector(yb))?;
            let value = loss.item();
            if !value.is_finite() {
                tensor::clear_tape();
                return Err(Error::Diverged {
                    step: adam.state().step as usize,
                    loss: value,
                });
            }
            tensor::backward(&loss)?;
            tensor::clear_tape();
            adam.step()?;
            sum += value * n as f64;
            count += n;
        }
        nn::reset_step(net);
        let test_loss = prediction_loss(net, &data.test_x, &test_y, &cfg.inner, test_key)?;
        emit(
            SpenRecord {
                epoch: epoch + 1,
                train_loss: sum / count.max(1) as f64,
                test_loss,
            },
            &mut records,
        );
    }
    Ok(records)
}

/// Model-scale test loss with the inner iteration count replaced by each
/// entry of `counts`. The network is not modified.
pub fn eval_altered_inner<E: Energy + ?Sized>(
    net: &E,
    data: &RegressionDataset,
    inner: &InnerConfig,
    counts: &[usize],
    key: StreamKey,
) -> Result<Vec<(usize, f64)>> {
    let test_y = data.model_test_y();
    counts
        .iter()
        .map(|&n| {
            let cfg = inner.with_iterations(n);
            Ok((n, prediction_loss(net, &data.test_x, &test_y, &cfg, key)?))
        })
        .collect()
}
