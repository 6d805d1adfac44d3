//! Gaussian adaptive stochastic search as a differentiable inner-loop
//! optimizer, plus the CEM and unrolled gradient-descent baselines.
//!
//! All searches work on a batch of independent problems at once: the search
//! state holds one Gaussian per batch row, and objectives map a candidate
//! block `[batch × M × dim]` to values `[batch × M]`.

mod gd;
mod search;
mod weights;

pub use gd::{unrolled_gd, DifferentiableObjective};
pub use search::{cem_optimize, cem_step, novas_optimize, novas_search, novas_step, CemConfig};
pub use weights::shape_weights;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFunction {
    /// `softmax(κ·F)`.
    Exp,
    /// `(F − F_min)·sigmoid(κ(F − γ))` with `γ` the elite threshold, then normalized.
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// Only the last iteration is recorded.
    Detached,
    /// Every iteration is recorded.
    Unrolled,
}

/// Which mean the spread is measured around in the σ update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaCenter {
    #[default]
    Updated,
    Previous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NovasConfig {
    pub samples: usize,
    pub iters: usize,
    /// Mean step size α.
    pub lr: f64,
    pub shape: ShapeFunction,
    pub kappa: f64,
    /// Elite fraction for the sigmoid shape; `n_elite = ceil(elite_frac · M)`.
    pub elite_frac: f64,
    /// Initial search spread used by callers that build the starting state.
    pub sigma0: f64,
    pub mode: GraphMode,
    pub normalize: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub maximize: bool,
    #[serde(default)]
    pub sigma_center: SigmaCenter,
}

fn default_epsilon() -> f64 {
    1e-3
}

impl Default for NovasConfig {
    fn default() -> Self {
        NovasConfig {
            samples: 100,
            iters: 10,
            lr: 1.0,
            shape: ShapeFunction::Exp,
            kappa: DEFAULT_KAPPA,
            elite_frac: 0.1,
            sigma0: 1.0,
            mode: GraphMode::Detached,
            normalize: true,
            epsilon: default_epsilon(),
            maximize: false,
            sigma_center: SigmaCenter::Updated,
        }
    }
}

/// Temperature of the exp shape on min-max normalized values.
pub const DEFAULT_KAPPA: f64 = 5.0;

impl NovasConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("novas: {msg}")));
        if self.samples < 2 {
            return bad("samples must be at least 2");
        }
        if self.iters < 1 {
            return bad("iters must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr <= 1.0) {
            return bad("lr must lie in (0, 1]");
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return bad("kappa must be finite and nonnegative");
        }
        if !(self.elite_frac > 0.0 && self.elite_frac <= 1.0) {
            return bad("elite_frac must lie in (0, 1]");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad("sigma0 must be positive");
        }
        Ok(())
    }

    pub fn n_elite(&self) -> usize {
        ((self.elite_frac * self.samples as f64).ceil() as usize).clamp(1, self.samples)
    }
}

/// One diagonal Gaussian per batch row.
#[derive(Clone, Debug)]
pub struct GaussianSearchState {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl GaussianSearchState {
    pub fn new(mu: Tensor, sigma: Tensor) -> Result<Self> {
        if mu.rank() != 2 || mu.shape() != sigma.shape() {
            return Err(Error::Config(format!(
                "search state: mu {:?} and sigma {:?} must be equal 2-D shapes",
                mu.shape(),
                sigma.shape()
            )));
        }
        if sigma.data().iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("search state: sigma must be positive".into()));
        }
        Ok(GaussianSearchState { mu, sigma })
    }

    /// Mean `mu` with every spread equal to `sigma0`.
    pub fn isotropic(mu: Tensor, sigma0: f64) -> Result<Self> {
        let sigma = Tensor::full(mu.shape(), sigma0);
        GaussianSearchState::new(mu, sigma)
    }

    pub fn batch(&self) -> usize {
        self.mu.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.mu.shape()[1]
    }

    pub fn detach(&self) -> Self {
        GaussianSearchState {
            mu: self.mu.detach(),
            sigma: self.sigma.detach(),
        }
    }
}

/// Maps candidates `[batch × M × dim]` to values `[batch × M]`. Must be pure.
pub trait BatchedObjective {
    fn evaluate(&self, candidates: &Tensor) -> Result<Tensor>;
}

impl<F> BatchedObjective for F
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    fn evaluate(&self, candidates: &Tensor) -> Result<Tensor> {
        self(candidates)
    }
}

#[cfg(test)]
mod tests;
