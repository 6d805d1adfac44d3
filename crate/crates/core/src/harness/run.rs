//! The CLI verbs as library calls. Every verb writes into the configured
//! output directory and leaves a manifest behind.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::bench::{bench_testfunctions, write_bench_csv, BenchRow};
use super::checkpoint::{Checkpoint, Cursor};
use super::config::{Experiment, RunConfig, SpenSection};
use super::manifest::Manifest;
use super::metrics::{opt, MetricsLog};
use crate::error::{Error, Result};
use crate::fbsde::{evaluate_policy, simulate, train_fbsde, FbsdeNetwork, NetworkConfig, SocProblem, TrainConfig, Trajectories};
use crate::nn::{Adam, Module};
use crate::novas::NovasConfig;
use crate::problems::{baseline_control, Baseline, CartPole, Market, Portfolio};
use crate::rng::StreamKey;
use crate::spen::{
    argmin_rmse, eval_altered_inner, linspace, prediction_loss, target, train_spen, EnergyNet, Landscape,
    RegressionDataset, SpenRecord, SpenTrainConfig,
};

pub const CHECKPOINT: &str = "checkpoint.json";

pub struct Runner {
    cfg: RunConfig,
    dir: PathBuf,
    started: Instant,
    verbose: bool,
}

impl Runner {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = cfg.output_dir.clone();
        fs::create_dir_all(&dir)?;
        Ok(Runner {
            cfg,
            dir,
            started: Instant::now(),
            verbose: false,
        })
    }

    /// Progress lines on stderr.
    pub fn verbose(mut self, on: bool) -> Self {
        self.verbose = on;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join(CHECKPOINT)
    }

    fn root(&self) -> StreamKey {
        StreamKey::new(self.cfg.seed)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[{:7.1}s] {}", self.started.elapsed().as_secs_f64(), msg.as_ref());
        }
    }

    fn wall(&self) -> String {
        opt(self.cfg.record_wall_time.then(|| self.started.elapsed().as_secs_f64()))
    }

    fn expect(&self, e: Experiment) -> Result<()> {
        if self.cfg.experiment != e {
            return Err(Error::Config(format!(
                "this verb needs experiment = \"{}\", config has \"{}\"",
                e.name(),
                self.cfg.experiment.name()
            )));
        }
        Ok(())
    }

    fn finish(&self, verb: &str, artifacts: &[PathBuf]) -> Result<Manifest> {
        let mut m = Manifest::new(verb, &self.cfg);
        if self.cfg.record_wall_time {
            m.wall_time_seconds = Some(self.started.elapsed().as_secs_f64());
        }
        for a in artifacts {
            m.add_artifact(a)?;
        }
        m.write(&self.dir)?;
        Ok(m)
    }

    fn load_checkpoint(&self, path: &Path, experiment: Experiment) -> Result<Checkpoint> {
        let ck = Checkpoint::load(path)?;
        if ck.cursor.experiment != experiment.name() {
            return Err(Error::Checkpoint(format!(
                "{} belongs to experiment `{}`",
                path.display(),
                ck.cursor.experiment
            )));
        }
        if let Some(w) = ck.config_mismatch(&self.cfg.hash()) {
            eprintln!("{w}");
        }
        Ok(ck)
    }

    fn save_checkpoint(&self, params: &dyn Module, adam: &Adam, completed: u64) -> Result<(PathBuf, PathBuf)> {
        Checkpoint {
            config_hash: self.cfg.hash(),
            cursor: Cursor {
                experiment: self.cfg.experiment.name().into(),
                completed,
                optimizer_step: adam.state().step,
            },
            params: params.snapshot(),
            optimizer: adam.state().clone(),
        }
        .save(&self.checkpoint_path())
    }

    /// Train, sweep and draw the landscape, or train and evaluate, or bench,
    /// depending on the experiment.
    pub fn run_all(&self, resume: Option<&Path>) -> Result<()> {
        match self.cfg.experiment {
            Experiment::Spen => {
                self.spen_train(resume)?;
                let ck = self.checkpoint_path();
                self.spen_eval_sweep(&ck)?;
                self.spen_landscape(&ck)?;
            }
            Experiment::Cartpole | Experiment::Portfolio => {
                self.fbsde_train(resume)?;
                self.fbsde_eval(&self.checkpoint_path())?;
            }
            Experiment::Bench => {
                self.bench()?;
            }
        }
        Ok(())
    }

    // ---- SPEN ----

    fn spen(&self) -> Result<&SpenSection> {
        self.expect(Experiment::Spen)?;
        Ok(self.cfg.spen.as_ref().expect("validated"))
    }

    fn spen_model(&self, s: &SpenSection) -> Result<(RegressionDataset, EnergyNet)> {
        let data = RegressionDataset::generate(&s.dataset, self.root().domain("data"))?;
        let net = EnergyNet::new(&s.hidden, self.root().domain("init"))?;
        Ok((data, net))
    }

    fn spen_trained(&self, checkpoint: &Path) -> Result<(RegressionDataset, EnergyNet)> {
        let s = self.spen()?;
        let (data, net) = self.spen_model(s)?;
        let ck = self.load_checkpoint(checkpoint, Experiment::Spen)?;
        net.load(&ck.params)?;
        Ok((data, net))
    }

    /// Train (or continue from `resume`) to `spen.epochs`, checkpointing
    /// every `checkpoint_every` epochs. Writes `metrics.csv`.
    pub fn spen_train(&self, resume: Option<&Path>) -> Result<SpenOutcome> {
        let s = self.spen()?;
        let (data, net) = self.spen_model(s)?;
        let mut adam = Adam::new(net.parameters(), s.optimizer.clone());
        let mut completed = 0usize;
        if let Some(path) = resume {
            let ck = self.load_checkpoint(path, Experiment::Spen)?;
            net.load(&ck.params)?;
            adam.set_state(ck.optimizer)?;
            completed = ck.cursor.completed as usize;
        }
        let header = ["epoch", "train_loss", "test_loss", "wall_time"];
        let metrics = self.dir.join("metrics.csv");
        let mut log = if completed > 0 {
            MetricsLog::resume(&metrics, &header, |e| e <= completed as u64)?
        } else {
            MetricsLog::create(&metrics, &header)?
        };
        let mut records = Vec::new();
        let mut chunk_run = |epochs: usize, adam: &mut Adam| -> Result<()> {
            let cfg = SpenTrainConfig {
                epochs,
                inner: s.inner.clone(),
            };
            let mut failed = None;
            train_spen(&net, adam, &data, &cfg, self.root().domain("train"), |r| {
                let row = [r.epoch.to_string(), r.train_loss.to_string(), r.test_loss.to_string(), self.wall()];
                if let Err(e) = log.row(&row) {
                    failed.get_or_insert(e);
                }
                self.say(format!("epoch {} train {:.5} test {:.5}", r.epoch, r.train_loss, r.test_loss));
                records.push(r.clone());
            })?;
            failed.map_or(Ok(()), Err)
        };
        if s.epochs == 0 && completed == 0 {
            chunk_run(0, &mut adam)?;
        }
        let mut saved = false;
        while completed < s.epochs {
            let left = s.epochs - completed;
            let chunk = if s.checkpoint_every > 0 { s.checkpoint_every.min(left) } else { left };
            chunk_run(chunk, &mut adam)?;
            completed += chunk;
            self.save_checkpoint(&net, &adam, completed as u64)?;
            saved = true;
        }
        if !saved {
            self.save_checkpoint(&net, &adam, completed as u64)?;
        }
        let ck = self.checkpoint_path();
        let test_loss = prediction_loss(&net, &data.test_x, &data.model_test_y(), &s.inner, self.root().domain("train").domain("test"))?;
        self.finish("spen-train", &[metrics, ck.clone(), super::checkpoint::payload_path(&ck)])?;
        Ok(SpenOutcome {
            records,
            test_loss,
            net,
            data,
        })
    }

    /// Test MSE of a trained model at every inner iteration count of
    /// `spen.eval.sweep`. Writes `sweep.csv`.
    pub fn spen_eval_sweep(&self, checkpoint: &Path) -> Result<Vec<(usize, f64)>> {
        let s = self.spen()?;
        let (data, net) = self.spen_trained(checkpoint)?;
        let sweep = eval_altered_inner(&net, &data, &s.inner, &s.eval.sweep, self.root().domain("sweep"))?;
        let path = self.dir.join("sweep.csv");
        let mut log = MetricsLog::create(&path, &["iterations", "test_loss"])?;
        for (n, l) in &sweep {
            log.row(&[n.to_string(), l.to_string()])?;
            self.say(format!("sweep {n} iterations: test {l:.5}"));
        }
        drop(log);
        self.finish("spen-eval-sweep", &[path])?;
        Ok(sweep)
    }

    /// Energy landscape over `x ∈ [0, 2π]` and the configured raw `y` range,
    /// with its argmin trace. Writes `landscape.csv` and `argmin.csv`.
    pub fn spen_landscape(&self, checkpoint: &Path) -> Result<LandscapeOutcome> {
        let s = self.spen()?;
        let (data, net) = self.spen_trained(checkpoint)?;
        let xs = linspace(0.0, std::f64::consts::TAU, s.eval.grid_x);
        let ys = linspace(s.eval.y_range[0], s.eval.y_range[1], s.eval.grid_y);
        let landscape = data.landscape(&net, &xs, &ys)?;
        let trace_rmse = argmin_rmse(&landscape, target);
        let grid = self.dir.join("landscape.csv");
        let trace = self.dir.join("argmin.csv");
        landscape.write_csv(BufWriter::new(File::create(&grid)?))?;
        landscape.write_argmin_csv(BufWriter::new(File::create(&trace)?), target)?;
        self.say(format!("argmin trace rmse {trace_rmse:.4}"));
        self.finish("spen-landscape", &[grid, trace])?;
        Ok(LandscapeOutcome { landscape, trace_rmse })
    }

    // ---- FBSDE ----

    fn fbsde(&self) -> Result<FbsdeSetup> {
        match self.cfg.experiment {
            Experiment::Cartpole => {
                let s = self.cfg.cartpole.as_ref().expect("validated");
                Ok(FbsdeSetup {
                    problem: Problem::CartPole(s.problem.clone()),
                    network: s.network.clone(),
                    train: s.train.clone(),
                    inference: s.inference_novas().clone(),
                    rollouts: s.eval.rollouts,
                    checkpoint_every: s.checkpoint_every,
                })
            }
            Experiment::Portfolio => {
                let s = self.cfg.portfolio.as_ref().expect("validated");
                let market = Market::generate(&s.problem, self.cfg.seed)?;
                Ok(FbsdeSetup {
                    problem: Problem::Portfolio(Box::new(Portfolio::new(market)?)),
                    network: s.network.clone(),
                    train: s.train.clone(),
                    inference: s.inference_novas().clone(),
                    rollouts: s.eval.rollouts,
                    checkpoint_every: s.checkpoint_every,
                })
            }
            other => Err(Error::Config(format!(
                "this verb needs experiment cartpole or portfolio, config has \"{}\"",
                other.name()
            ))),
        }
    }

    fn fbsde_net(&self, setup: &FbsdeSetup) -> Result<FbsdeNetwork> {
        let p = setup.problem.as_dyn();
        FbsdeNetwork::new(p.state_dim(), p.hessian_column().is_some(), &setup.network, self.root().domain("init"))
    }

    /// Train (or continue from `resume`) to `train.iterations`. Writes
    /// `metrics.csv`, plus `market.json` for the portfolio.
    pub fn fbsde_train(&self, resume: Option<&Path>) -> Result<FbsdeTrainOutcome> {
        let setup = self.fbsde()?;
        let problem = setup.problem.as_dyn();
        let mut net = self.fbsde_net(&setup)?;
        let mut adam = Adam::new(net.parameters(), setup.train.optimizer.clone());
        let mut completed = 0usize;
        if let Some(path) = resume {
            let ck = self.load_checkpoint(path, self.cfg.experiment)?;
            net.load(&ck.params)?;
            adam.set_state(ck.optimizer)?;
            completed = ck.cursor.completed as usize;
        }
        let mut artifacts = Vec::new();
        if let Problem::Portfolio(p) = &setup.problem {
            let path = self.dir.join("market.json");
            fs::write(&path, serde_json::to_string_pretty(p.market())? + "\n")?;
            artifacts.push(path);
        }
        let header = ["iteration", "loss", "v0", "lr", "mean_terminal_cost", "val_loss", "wall_time"];
        let metrics = self.dir.join("metrics.csv");
        let mut log = if completed > 0 {
            MetricsLog::resume(&metrics, &header, |i| i < completed as u64)?
        } else {
            MetricsLog::create(&metrics, &header)?
        };
        let total = setup.train.iterations;
        let mut losses = Vec::new();
        let mut chunk_run = |iterations: usize, net: &mut FbsdeNetwork, adam: &mut Adam| -> Result<()> {
            let cfg = TrainConfig {
                iterations,
                ..setup.train.clone()
            };
            let mut failed = None;
            train_fbsde(problem, net, adam, &cfg, self.root().domain("train"), |r| {
                let row = [
                    r.iteration.to_string(),
                    r.loss.to_string(),
                    r.v0.to_string(),
                    r.lr.to_string(),
                    r.mean_terminal_cost.to_string(),
                    opt(r.val_loss),
                    self.wall(),
                ];
                if let Err(e) = log.row(&row) {
                    failed.get_or_insert(e);
                }
                if r.iteration % 25 == 0 || r.val_loss.is_some() {
                    self.say(format!(
                        "iteration {} loss {:.4} v0 {:.4} terminal cost {:.4}",
                        r.iteration, r.loss, r.v0, r.mean_terminal_cost
                    ));
                }
                losses.push(r.loss);
            })?;
            failed.map_or(Ok(()), Err)
        };
        if total == 0 && completed == 0 {
            chunk_run(0, &mut net, &mut adam)?;
        }
        let mut saved = false;
        while completed < total {
            let left = total - completed;
            let chunk = if setup.checkpoint_every > 0 { setup.checkpoint_every.min(left) } else { left };
            chunk_run(chunk, &mut net, &mut adam)?;
            completed += chunk;
            self.save_checkpoint(&net, &adam, completed as u64)?;
            saved = true;
        }
        if !saved {
            self.save_checkpoint(&net, &adam, completed as u64)?;
        }
        let ck = self.checkpoint_path();
        artifacts.extend([metrics, ck.clone(), super::checkpoint::payload_path(&ck)]);
        self.finish("fbsde-train", &artifacts)?;
        Ok(FbsdeTrainOutcome { losses, net })
    }

    /// Roll out the trained policy with the inference NOVAS settings on
    /// held-out noise. Writes `trajectories.csv` and `eval.json`.
    pub fn fbsde_eval(&self, checkpoint: &Path) -> Result<FbsdeReport> {
        let setup = self.fbsde()?;
        let problem = setup.problem.as_dyn();
        let mut net = self.fbsde_net(&setup)?;
        let ck = self.load_checkpoint(checkpoint, self.cfg.experiment)?;
        net.load(&ck.params)?;
        let key = self.root().domain("eval");
        let ev = evaluate_policy(problem, &mut net, &setup.inference, setup.rollouts, key)?;
        let traj = &ev.trajectories;
        let mut report = FbsdeReport {
            experiment: self.cfg.experiment.name().into(),
            rollouts: setup.rollouts,
            iterations_trained: ck.cursor.completed,
            terminal_cost: Summary::from(ev.terminal_cost),
            angle_error: None,
            cart_offset: None,
            wealth_minus_index: None,
            baselines: Vec::new(),
        };
        match &setup.problem {
            Problem::CartPole(cp) => {
                let term = traj.terminal_states();
                let n = term.len().max(1) as f64;
                report.angle_error = Some(term.iter().map(|s| (s[1] - cp.target[1]).abs()).sum::<f64>() / n);
                report.cart_offset = Some(term.iter().map(|s| (s[0] - cp.target[0]).abs()).sum::<f64>() / n);
            }
            Problem::Portfolio(p) => {
                report.wealth_minus_index = Some(wealth_minus_index(traj));
                for kind in [Baseline::Equal, Baseline::Random] {
                    let bkey = self.root().domain("baseline");
                    let t = simulate(p.as_ref(), setup.rollouts, key, |k, x| {
                        Ok(baseline_control(kind, x.shape()[0], p.control_dim(), bkey, k))
                    })?;
                    report.baselines.push(BaselineReport {
                        strategy: kind,
                        terminal_cost: Summary::from(crate::fbsde::summarize(t.terminal_cost.iter().copied())),
                        wealth_minus_index: wealth_minus_index(&t),
                    });
                }
            }
        }
        let tpath = self.dir.join("trajectories.csv");
        write_trajectories(traj, &tpath)?;
        let epath = self.dir.join("eval.json");
        fs::write(&epath, serde_json::to_string_pretty(&report)? + "\n")?;
        self.say(format!("terminal cost mean {:.4}", report.terminal_cost.mean));
        self.finish("fbsde-eval", &[tpath, epath])?;
        Ok(report)
    }

    // ---- bench ----

    /// Success rates on the test functions. Writes `bench.csv`.
    pub fn bench(&self) -> Result<Vec<BenchRow>> {
        self.expect(Experiment::Bench)?;
        let rows = bench_testfunctions(&self.cfg.bench_config(), self.root().domain("bench"))?;
        let path = self.dir.join("bench.csv");
        write_bench_csv(&rows, BufWriter::new(File::create(&path)?))?;
        for r in &rows {
            self.say(format!(
                "{} {} σ0={} success {}/{}",
                r.function, r.method, r.sigma0, r.successes, r.trials
            ));
        }
        self.finish("bench", &[path])?;
        Ok(rows)
    }
}

/// One-line-per-entry description of a checkpoint.
pub fn inspect_checkpoint(path: &Path) -> Result<String> {
    use std::fmt::Write;
    let meta = Checkpoint::read_sidecar(path)?;
    let ck = Checkpoint::load(path)?;
    let mut s = String::new();
    let _ = writeln!(s, "experiment  {}", ck.cursor.experiment);
    let _ = writeln!(s, "completed   {}", ck.cursor.completed);
    let _ = writeln!(s, "adam step   {}", ck.optimizer.step);
    let _ = writeln!(s, "config      {}", ck.config_hash);
    let _ = writeln!(s, "payload     {} ({} values)", meta.payload, meta.payload_len);
    let mut total = 0;
    for p in &ck.params {
        let norm = p.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let _ = writeln!(s, "  {:<28} {:?} |·|={norm:.4}", p.name, p.shape);
        total += p.data.len();
    }
    let _ = writeln!(s, "parameters  {total}");
    Ok(s)
}

pub struct SpenOutcome {
    pub records: Vec<SpenRecord>,
    /// Test MSE of the final model with the training inner settings.
    pub test_loss: f64,
    pub net: EnergyNet,
    pub data: RegressionDataset,
}

pub struct LandscapeOutcome {
    pub landscape: Landscape,
    /// Raw-unit RMSE of the argmin trace to the target curve.
    pub trace_rmse: f64,
}

pub struct FbsdeTrainOutcome {
    pub losses: Vec<f64>,
    pub net: FbsdeNetwork,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl From<[f64; 4]> for Summary {
    fn from([mean, std, min, max]: [f64; 4]) -> Self {
        Summary { mean, std, min, max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BaselineReport {
    pub strategy: Baseline,
    pub terminal_cost: Summary,
    pub wealth_minus_index: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FbsdeReport {
    pub experiment: String,
    pub rollouts: usize,
    pub iterations_trained: u64,
    pub terminal_cost: Summary,
    /// Cart-pole: mean terminal `|θ − θ*|`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angle_error: Option<f64>,
    /// Cart-pole: mean terminal `|x − x*|`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cart_offset: Option<f64>,
    /// Portfolio: mean terminal `W − I`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wealth_minus_index: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub baselines: Vec<BaselineReport>,
}

enum Problem {
    CartPole(CartPole),
    Portfolio(Box<Portfolio>),
}

impl Problem {
    fn as_dyn(&self) -> &dyn SocProblem {
        match self {
            Problem::CartPole(c) => c,
            Problem::Portfolio(p) => p.as_ref(),
        }
    }
}

struct FbsdeSetup {
    problem: Problem,
    network: NetworkConfig,
    train: TrainConfig,
    inference: NovasConfig,
    rollouts: usize,
    checkpoint_every: usize,
}

/// Mean terminal wealth minus the equally weighted index, for states laid
/// out as `[S_1 .. S_N, W]`.
pub fn wealth_minus_index(t: &Trajectories) -> f64 {
    let n = t.state_dim - 1;
    let term = t.terminal_states();
    let total: f64 = term
        .iter()
        .map(|s| s[n] - s[..n].iter().sum::<f64>() / n as f64)
        .sum();
    total / term.len().max(1) as f64
}

/// Long format, one row per rollout and step; controls are empty on the
/// terminal step.
fn write_trajectories(t: &Trajectories, path: &Path) -> Result<()> {
    let mut header: Vec<String> = vec!["rollout".into(), "step".into()];
    header.extend((0..t.state_dim).map(|i| format!("x{i}")));
    header.extend((0..t.control_dim).map(|i| format!("u{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut log = MetricsLog::create(path, &header)?;
    for r in 0..t.batch {
        for k in 0..=t.steps {
            let mut row = vec![r.to_string(), k.to_string()];
            row.extend(t.state(r, k).iter().map(f64::to_string));
            if k < t.steps {
                row.extend(t.control(r, k).iter().map(f64::to_string));
            } else {
                row.extend(std::iter::repeat_n(String::new(), t.control_dim));
            }
            log.row(&row)?;
        }
    }
    Ok(())
}
