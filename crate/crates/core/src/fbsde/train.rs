use serde::{Deserialize, Serialize};

use super::network::FbsdeNetwork;
use super::problem::SocProblem;
use super::rollout::{fbsde_rollout, summarize, ControlSource, RolloutBatch, Trajectories};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, AdamConfig, Module, ParamSnapshot};
use crate::novas::NovasConfig;
use crate::rng::StreamKey;
use crate::tensor::{self, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Weights of `[V_K−φ, V_x−φ_x, V_xx−φ_xx, φ², φ_x², φ_xx²]`.
    pub weights: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    50.0
}

impl LossConfig {
    pub fn cartpole() -> Self {
        LossConfig {
            weights: vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0],
            delta: 50.0,
        }
    }

    pub fn portfolio() -> Self {
        LossConfig {
            weights: vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0],
            delta: 50.0,
        }
    }
}

/// The total loss and each weighted term's value.
pub struct FbsdeLoss {
    pub total: Tensor,
    pub terms: [f64; 6],
}

/// Terminal-condition loss: Huber penalties on the mismatch of value,
/// gradient and Hessian column at `T`, plus direct penalties on the terminal
/// cost and its derivatives. Every term is a batch mean.
pub fn fbsde_loss<P: SocProblem + ?Sized>(rollout: &RolloutBatch, problem: &P, cfg: &LossConfig) -> Result<FbsdeLoss> {
    let w = &cfg.weights;
    if w.len() != 6 {
        return Err(Error::Config(format!("loss: need 6 weights, got {}", w.len())));
    }
    let batch = rollout.batch();
    let phi = problem.terminal(rollout.terminal_state())?;
    let needs_hess = w[2] != 0.0 || w[5] != 0.0;
    let hess = match (&phi.hess_col, rollout.hess.last()) {
        (Some(target), Some(pred)) => Some((target, pred)),
        _ if needs_hess => {
            return Err(Error::Config("loss: Hessian terms weighted but no Hessian column available".into()))
        }
        _ => None,
    };
    let mean_sq = |t: &Tensor| t.square().sum_all().mul_scalar(1.0 / batch as f64);
    let mut parts: Vec<Option<Tensor>> = vec![None; 6];
    if w[0] != 0.0 {
        let gap = rollout.terminal_value().sub(&phi.value)?.reshape(&[batch, 1])?;
        parts[0] = Some(nn::huber(&gap, cfg.delta)?);
    }
    if w[1] != 0.0 {
        parts[1] = Some(nn::huber(&rollout.vx.last().expect("nonempty").sub(&phi.grad)?, cfg.delta)?);
    }
    if let Some((target, pred)) = hess {
        if w[2] != 0.0 {
            parts[2] = Some(nn::huber(&pred.sub(target)?, cfg.delta)?);
        }
        if w[5] != 0.0 {
            parts[5] = Some(mean_sq(target));
        }
    }
    if w[3] != 0.0 {
        parts[3] = Some(mean_sq(&phi.value));
    }
    if w[4] != 0.0 {
        parts[4] = Some(mean_sq(&phi.grad));
    }
    let mut total = Tensor::scalar(0.0);
    let mut terms = [0.0; 6];
    for (i, p) in parts.into_iter().enumerate() {
        if let Some(p) = p {
            let weighted = p.mul_scalar(w[i]);
            terms[i] = weighted.item();
            total = total.add(&weighted)?;
        }
    }
    Ok(FbsdeLoss { total, terms })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub optimizer: AdamConfig,
    pub loss: LossConfig,
    pub novas: NovasConfig,
    /// Validation every this many iterations (0 disables).
    #[serde(default = "default_val_every")]
    pub val_every: usize,
    #[serde(default = "default_val_batch")]
    pub val_batch: usize,
}

fn default_val_every() -> usize {
    50
}

fn default_val_batch() -> usize {
    128
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss: f64,
    pub terms: [f64; 6],
    pub v0: f64,
    pub lr: f64,
    pub mean_terminal_cost: f64,
    pub val_loss: Option<f64>,
}

pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
    pub best_val_loss: Option<f64>,
    pub best: Option<Vec<ParamSnapshot>>,
}

/// Validation loss on a fixed noise stream, off the tape.
pub fn validation_loss<P: SocProblem + ?Sized>(
    problem: &P,
    net: &mut FbsdeNetwork,
    cfg: &TrainConfig,
    key: StreamKey,
) -> Result<f64> {
    tensor::no_grad(|| {
        let r = fbsde_rollout(problem, net, &ControlSource::Novas(&cfg.novas), key, cfg.val_batch)?;
        Ok(fbsde_loss(&r, problem, &cfg.loss)?.total.item())
    })
}

/// Adam on all network parameters for `iterations` (from `adam`'s current
/// step count). Training batches draw noise from `key.domain("train")`,
/// validation from `key.domain("val")`. A fresh run with zero iterations
/// reports a single record with the initial losses.
pub fn train_fbsde<P: SocProblem + ?Sized>(
    problem: &P,
    net: &mut FbsdeNetwork,
    adam: &mut Adam,
    cfg: &TrainConfig,
    key: StreamKey,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<TrainOutcome> {
    cfg.novas.validate()?;
    let start = adam.state().step as usize;
    let mut outcome = TrainOutcome {
        records: Vec::new(),
        best_val_loss: None,
        best: None,
    };
    let val_key = key.domain("val");
    if start == 0 && cfg.iterations == 0 {
        let record = initial_record(problem, net, adam, cfg, key)?;
        on_record(&record);
        outcome.records.push(record);
        return Ok(outcome);
    }
    for it in start..start + cfg.iterations {
        nn::reset_step(net);
        let rollout = fbsde_rollout(
            problem,
            net,
            &ControlSource::Novas(&cfg.novas),
            key.domain("train").child(it as u64),
            cfg.batch,
        )?;
        let loss = fbsde_loss(&rollout, problem, &cfg.loss)?;
        let value = loss.total.item();
        if !value.is_finite() {
            tensor::clear_tape();
            return Err(Error::Diverged { step: it, loss: value });
        }
        let mean_terminal_cost = tensor::no_grad(|| problem.terminal(rollout.terminal_state()))?
            .value
            .mean_all()
            .item();
        drop(rollout);
        tensor::backward(&loss.total)?;
        tensor::clear_tape();
        let lr = adam.current_lr();
        adam.step()?;
        let val_loss = if cfg.val_every > 0 && (it + 1) % cfg.val_every == 0 {
            let v = validation_loss(problem, net, cfg, val_key)?;
            if outcome.best_val_loss.is_none_or(|b| v < b) {
                outcome.best_val_loss = Some(v);
                outcome.best = Some(net.snapshot());
            }
            Some(v)
        } else {
            None
        };
        let record = TrainRecord {
            iteration: it,
            loss: value,
            terms: loss.terms,
            v0: net.v0.item(),
            lr,
            mean_terminal_cost,
            val_loss,
        };
        on_record(&record);
        outcome.records.push(record);
    }
    nn::reset_step(net);
    Ok(outcome)
}

/// Loss of the untrained network on the first training batch and the
/// validation stream, without an update.
fn initial_record<P: SocProblem + ?Sized>(
    problem: &P,
    net: &mut FbsdeNetwork,
    adam: &Adam,
    cfg: &TrainConfig,
    key: StreamKey,
) -> Result<TrainRecord> {
    let (loss, mean_terminal_cost) = tensor::no_grad(|| -> Result<_> {
        let r = fbsde_rollout(problem, net, &ControlSource::Novas(&cfg.novas), key.domain("train").child(0), cfg.batch)?;
        let loss = fbsde_loss(&r, problem, &cfg.loss)?;
        let cost = problem.terminal(r.terminal_state())?.value.mean_all().item();
        Ok((loss, cost))
    })?;
    let val_loss = validation_loss(problem, net, cfg, key.domain("val"))?;
    nn::reset_step(net);
    Ok(TrainRecord {
        iteration: 0,
        loss: loss.total.item(),
        terms: loss.terms,
        v0: net.v0.item(),
        lr: adam.current_lr(),
        mean_terminal_cost,
        val_loss: Some(val_loss),
    })
}

/// Per-rollout results of running a trained network off the tape.
pub struct PolicyEvaluation {
    pub trajectories: Trajectories,
    /// Per step and coordinate: (mean, std, min, max) across rollouts.
    pub state_stats: Vec<Vec<[f64; 4]>>,
    /// (mean, std, min, max) of the terminal cost.
    pub terminal_cost: [f64; 4],
}

pub fn evaluate_policy<P: SocProblem + ?Sized>(
    problem: &P,
    net: &mut FbsdeNetwork,
    novas: &NovasConfig,
    rollouts: usize,
    key: StreamKey,
) -> Result<PolicyEvaluation> {
    let trajectories = tensor::no_grad(|| -> Result<_> {
        let r = fbsde_rollout(problem, net, &ControlSource::Novas(novas), key, rollouts)?;
        Trajectories::from_tensors(problem, &r.states, &r.controls)
    })?;
    let state_stats = trajectories.state_stats();
    let terminal_cost = summarize(trajectories.terminal_cost.iter().copied());
    Ok(PolicyEvaluation {
        trajectories,
        state_stats,
        terminal_cost,
    })
}
