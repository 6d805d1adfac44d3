//! Global-optimum success rates of NOVAS, CEM and gradient descent on a
//! small suite of test functions.

use std::f64::consts::TAU;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::novas::{
    cem_optimize, novas_optimize, unrolled_gd, CemConfig, DifferentiableObjective, GaussianSearchState,
    NovasConfig,
};
use crate::rng::StreamKey;
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    /// `|x − (1.5, −0.5)|²`.
    Quadratic,
    /// `0.05 (x − 2)² − cos(3 (x − 2))`, global minimum −1 at `x = 2`.
    Multimodal,
    /// `20 + Σ (x_i² − 10 cos(2π x_i))` in two dimensions.
    Rastrigin,
}

impl TestFunction {
    pub const ALL: [TestFunction; 3] = [TestFunction::Quadratic, TestFunction::Multimodal, TestFunction::Rastrigin];

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Quadratic => "quadratic",
            TestFunction::Multimodal => "multimodal",
            TestFunction::Rastrigin => "rastrigin",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            TestFunction::Multimodal => 1,
            _ => 2,
        }
    }

    pub fn optimum(self) -> Vec<f64> {
        match self {
            TestFunction::Quadratic => vec![1.5, -0.5],
            TestFunction::Multimodal => vec![2.0],
            TestFunction::Rastrigin => vec![0.0, 0.0],
        }
    }

    /// Starts are drawn uniformly from this interval in every coordinate.
    pub fn start_range(self) -> (f64, f64) {
        match self {
            TestFunction::Quadratic => (-5.0, 5.0),
            TestFunction::Multimodal => (-4.0, 8.0),
            TestFunction::Rastrigin => (-3.0, 3.0),
        }
    }

    /// Euclidean distance to the optimum that counts as success.
    pub fn tolerance(self) -> f64 {
        match self {
            TestFunction::Quadratic => 1e-2,
            _ => 5e-2,
        }
    }

    /// Stable gradient-descent step: below 2 / (curvature at the optimum).
    pub fn gd_lr(self) -> f64 {
        match self {
            TestFunction::Quadratic => 0.1,
            TestFunction::Multimodal => 0.05,
            TestFunction::Rastrigin => 0.002,
        }
    }

    /// Values over the last axis of `x: [.., dim]`.
    pub fn value(self, x: &Tensor) -> Result<Tensor> {
        let last = x.rank() - 1;
        let v = match self {
            TestFunction::Quadratic => {
                let c = Tensor::vector(self.optimum());
                x.sub(&c)?.square().sum_axis(last, false)?
            }
            TestFunction::Multimodal => {
                let d = x.add_scalar(-2.0);
                let v = d.square().mul_scalar(0.05).sub(&d.mul_scalar(3.0).cos())?;
                v.sum_axis(last, false)?
            }
            TestFunction::Rastrigin => {
                let v = x.square().sub(&x.mul_scalar(TAU).cos().mul_scalar(10.0))?;
                v.sum_axis(last, false)?.add_scalar(10.0 * self.dim() as f64)
            }
        };
        Ok(v)
    }

    pub fn gradient(self, x: &Tensor) -> Result<Tensor> {
        Ok(match self {
            TestFunction::Quadratic => x.sub(&Tensor::vector(self.optimum()))?.mul_scalar(2.0),
            TestFunction::Multimodal => {
                let d = x.add_scalar(-2.0);
                d.mul_scalar(0.1).add(&d.mul_scalar(3.0).sin().mul_scalar(3.0))?
            }
            TestFunction::Rastrigin => x.mul_scalar(2.0).add(&x.mul_scalar(TAU).sin().mul_scalar(20.0 * std::f64::consts::PI))?,
        })
    }

    pub fn min_value(self) -> f64 {
        match self {
            TestFunction::Multimodal => -1.0,
            _ => 0.0,
        }
    }
}

impl DifferentiableObjective for TestFunction {
    fn value_and_gradient(&self, y: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((self.value(y)?, self.gradient(y)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub trials: usize,
    pub novas: NovasConfig,
    pub cem: CemConfig,
    /// Extra NOVAS runs at these initial spreads.
    #[serde(default)]
    pub sigma_sweep: Vec<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            trials: 100,
            novas: NovasConfig {
                iters: 20,
                sigma0: 3.0,
                ..NovasConfig::default()
            },
            cem: CemConfig {
                samples: 100,
                elites: 10,
                iters: 20,
                epsilon: 1e-3,
                maximize: false,
            },
            sigma_sweep: vec![0.3, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub function: &'static str,
    pub method: &'static str,
    pub sigma0: f64,
    pub trials: usize,
    pub successes: usize,
    pub mean_final_value: f64,
    /// Objective evaluations per trial (one per gradient step for GD).
    pub evaluations: usize,
}

impl BenchRow {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials.max(1) as f64
    }
}

/// Starting points `[trials × dim]`, one independent stream per trial.
pub fn bench_starts(f: TestFunction, trials: usize, key: StreamKey) -> Tensor {
    let (lo, hi) = f.start_range();
    let d = f.dim();
    let mut data = Vec::with_capacity(trials * d);
    for t in 0..trials {
        let mut rng = key.child(t as u64).rng();
        data.extend((0..d).map(|_| rng.random_range(lo..hi)));
    }
    Tensor::new(data, &[trials, d]).expect("shape matches data")
}

fn score(f: TestFunction, method: &'static str, sigma0: f64, x: &Tensor, evaluations: usize) -> Result<BenchRow> {
    let d = f.dim();
    let opt = f.optimum();
    let xs = x.to_vec();
    let trials = xs.len() / d;
    let successes = xs
        .chunks(d)
        .filter(|p| p.iter().zip(&opt).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < f.tolerance())
        .count();
    let values = f.value(x)?.to_vec();
    Ok(BenchRow {
        function: f.name(),
        method,
        sigma0,
        trials,
        successes,
        mean_final_value: values.iter().sum::<f64>() / trials.max(1) as f64,
        evaluations,
    })
}

/// NOVAS at `cfg.novas.sigma0` and every sweep spread, CEM at the same
/// spread, and gradient descent with as many steps as NOVAS has objective
/// evaluations. Trial `t` starts from `key.domain("start")` child `t` and is
/// batch row `t` of every search.
pub fn bench_testfunctions(cfg: &BenchConfig, key: StreamKey) -> Result<Vec<BenchRow>> {
    cfg.novas.validate()?;
    cfg.cem.validate()?;
    if cfg.trials == 0 {
        return Err(Error::Config("bench.trials must be positive".into()));
    }
    tensor::no_grad(|| {
        let mut rows = Vec::new();
        let budget = cfg.novas.samples * cfg.novas.iters;
        for f in TestFunction::ALL {
            let starts = bench_starts(f, cfg.trials, key.domain("start").domain(f.name()));
            let obj = |c: &Tensor| f.value(c);
            let mut sigmas = vec![cfg.novas.sigma0];
            sigmas.extend(cfg.sigma_sweep.iter().copied().filter(|s| *s != cfg.novas.sigma0));
            for &s in &sigmas {
                let init = GaussianSearchState::isotropic(starts.clone(), s)?;
                let x = novas_optimize(&obj, &init, &cfg.novas, key.domain("novas").domain(f.name()))?;
                rows.push(score(f, "novas", s, &x, budget)?);
            }
            let init = GaussianSearchState::isotropic(starts.clone(), cfg.novas.sigma0)?;
            let x = cem_optimize(&obj, &init, &cfg.cem, key.domain("cem").domain(f.name()))?;
            rows.push(score(f, "cem", cfg.novas.sigma0, &x, cfg.cem.samples * cfg.cem.iters)?);
            let x = unrolled_gd(&f, &starts, budget, f.gd_lr())?;
            rows.push(score(f, "gd", 0.0, &x, budget)?);
        }
        Ok(rows)
    })
}

pub fn write_bench_csv(rows: &[BenchRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "function,method,sigma0,trials,successes,success_rate,mean_final_value,evaluations")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.function,
            r.method,
            r.sigma0,
            r.trials,
            r.successes,
            r.success_rate(),
            r.mean_final_value,
            r.evaluations
        )?;
    }
    Ok(())
}
