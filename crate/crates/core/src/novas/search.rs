use serde::{Deserialize, Serialize};

use super::{shape_weights, BatchedObjective, GaussianSearchState, GraphMode, NovasConfig, SigmaCenter};
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::tensor::{self, Tensor};

/// Draw `x = μ + σ⊙z` for every batch row; `z` comes from `key.child(row)`.
fn sample(state: &GaussianSearchState, m: usize, key: StreamKey) -> Result<Tensor> {
    let (b, d) = (state.batch(), state.dim());
    let z = Tensor::new(key.normal_rows(b, m * d), &[b, m, d])?;
    Ok(state.mu.unsqueeze(1)?.add(&state.sigma.unsqueeze(1)?.mul(&z)?)?)
}

fn evaluate<O: BatchedObjective + ?Sized>(obj: &O, x: &Tensor) -> Result<Tensor> {
    let want = vec![x.shape()[0], x.shape()[1]];
    let values = obj.evaluate(x)?;
    if values.shape() != want.as_slice() {
        return Err(Error::ObjectiveShape {
            got: values.shape().to_vec(),
            want,
        });
    }
    if !values.all_finite() {
        return Err(Error::NonFiniteObjective);
    }
    Ok(values)
}

/// `μ ← μ + α Σ w (x − μ)`, `σ = sqrt(Σ w (x − c)² + ε)`.
fn refit(
    state: &GaussianSearchState,
    x: &Tensor,
    w: &Tensor,
    alpha: f64,
    epsilon: f64,
    center: SigmaCenter,
) -> Result<GaussianSearchState> {
    let w = w.unsqueeze(2)?;
    let dx = x.sub(&state.mu.unsqueeze(1)?)?;
    let mu = state.mu.add(&w.mul(&dx)?.sum_axis(1, false)?.mul_scalar(alpha))?;
    let c = match center {
        SigmaCenter::Updated => &mu,
        SigmaCenter::Previous => &state.mu,
    };
    let spread = x.sub(&c.unsqueeze(1)?)?.square();
    let sigma = w.mul(&spread)?.sum_axis(1, false)?.add_scalar(epsilon).sqrt();
    Ok(GaussianSearchState { mu, sigma })
}

/// One search iteration. Recorded on the tape iff recording is active.
pub fn novas_step<O: BatchedObjective + ?Sized>(
    state: &GaussianSearchState,
    obj: &O,
    cfg: &NovasConfig,
    key: StreamKey,
) -> Result<GaussianSearchState> {
    let x = sample(state, cfg.samples, key)?;
    let values = evaluate(obj, &x)?;
    let fitness = if cfg.maximize { values } else { values.neg() };
    let w = shape_weights(&fitness, cfg)?;
    refit(state, &x, &w, cfg.lr, cfg.epsilon, cfg.sigma_center)
}

/// Run `cfg.iters` iterations and return the final state. Iteration `i`
/// samples from `key.child(i)`. In detached mode all but the last iteration
/// run off the tape.
pub fn novas_search<O: BatchedObjective + ?Sized>(
    obj: &O,
    init: &GaussianSearchState,
    cfg: &NovasConfig,
    key: StreamKey,
) -> Result<GaussianSearchState> {
    cfg.validate()?;
    let last = cfg.iters - 1;
    let mut state = init.clone();
    if cfg.mode == GraphMode::Detached && last > 0 {
        state = tensor::no_grad(|| -> Result<_> {
            let mut s = state;
            for i in 0..last {
                s = novas_step(&s, obj, cfg, key.child(i as u64))?;
            }
            Ok(s)
        })?;
    } else {
        for i in 0..last {
            state = novas_step(&state, obj, cfg, key.child(i as u64))?;
        }
    }
    novas_step(&state, obj, cfg, key.child(last as u64))
}

/// Final search mean `[batch × dim]`.
pub fn novas_optimize<O: BatchedObjective + ?Sized>(
    obj: &O,
    init: &GaussianSearchState,
    cfg: &NovasConfig,
    key: StreamKey,
) -> Result<Tensor> {
    Ok(novas_search(obj, init, cfg, key)?.mu)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CemConfig {
    pub samples: usize,
    pub elites: usize,
    pub iters: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub maximize: bool,
}

fn default_epsilon() -> f64 {
    1e-3
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 || self.iters < 1 {
            return Err(Error::Config("cem: need samples ≥ 2 and iters ≥ 1".into()));
        }
        if self.elites == 0 || self.elites > self.samples {
            return Err(Error::Config(format!(
                "cem: elites must lie in 1..={}, got {}",
                self.samples, self.elites
            )));
        }
        Ok(())
    }
}

/// Cross-entropy method iteration: equal weight on the `k` best samples,
/// full step on the mean. Always runs off the tape.
pub fn cem_step<O: BatchedObjective + ?Sized>(
    state: &GaussianSearchState,
    obj: &O,
    cfg: &CemConfig,
    key: StreamKey,
) -> Result<GaussianSearchState> {
    cfg.validate()?;
    tensor::no_grad(|| {
        let x = sample(state, cfg.samples, key)?;
        let values = evaluate(obj, &x)?;
        let (b, m, k) = (state.batch(), cfg.samples, cfg.elites);
        let mut w = vec![0.0; b * m];
        for (row, vals) in values.data().chunks(m).enumerate() {
            let mut order: Vec<usize> = (0..m).collect();
            if cfg.maximize {
                order.sort_by(|&p, &q| vals[q].total_cmp(&vals[p]).then(p.cmp(&q)));
            } else {
                order.sort_by(|&p, &q| vals[p].total_cmp(&vals[q]).then(p.cmp(&q)));
            }
            for &j in &order[..k] {
                w[row * m + j] = 1.0 / k as f64;
            }
        }
        let w = Tensor::new(w, &[b, m])?;
        refit(state, &x, &w, 1.0, cfg.epsilon, SigmaCenter::Updated)
    })
}

/// Final CEM mean after `cfg.iters` iterations; a constant tensor.
pub fn cem_optimize<O: BatchedObjective + ?Sized>(
    obj: &O,
    init: &GaussianSearchState,
    cfg: &CemConfig,
    key: StreamKey,
) -> Result<Tensor> {
    let mut state = init.detach();
    for i in 0..cfg.iters {
        state = cem_step(&state, obj, cfg, key.child(i as u64))?;
    }
    Ok(state.mu)
}
