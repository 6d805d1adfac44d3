use super::network::FbsdeNetwork;
use super::problem::{hamiltonian, SocProblem};
use crate::error::Result;
use crate::novas::{novas_optimize, GaussianSearchState, NovasConfig};
use crate::rng::StreamKey;
use crate::tensor::{self, Tensor};

/// How the control is chosen at each step of a network rollout.
pub enum ControlSource<'a> {
    /// Minimize the Hamiltonian with NOVAS, warm-started at the previous control.
    Novas(&'a NovasConfig),
    /// Any map `(x, V_x) → u`, e.g. a closed-form minimizer.
    Exact(&'a dyn Fn(&Tensor, &Tensor) -> Result<Tensor>),
}

/// Everything recorded along one batch of forward trajectories.
pub struct RolloutBatch {
    /// `K + 1` states `[batch × n]`.
    pub states: Vec<Tensor>,
    /// `K` controls `[batch × m]`.
    pub controls: Vec<Tensor>,
    /// `K + 1` values `[batch]`; the first is `V₀` broadcast.
    pub values: Vec<Tensor>,
    /// `K + 1` predicted value gradients `[batch × n]`.
    pub vx: Vec<Tensor>,
    /// `K + 1` predicted Hessian columns, empty without a Hessian head.
    pub hess: Vec<Tensor>,
    /// `K` Brownian increments `[batch × v]`, each entry `N(0, Δt)`.
    pub noise: Vec<Tensor>,
    /// `K` value increments `−l Δt + V_xᵀ Σ Δw`, `[batch]`.
    pub increments: Vec<Tensor>,
}

impl RolloutBatch {
    pub fn batch(&self) -> usize {
        self.states[0].shape()[0]
    }

    pub fn terminal_state(&self) -> &Tensor {
        self.states.last().expect("nonempty")
    }

    pub fn terminal_value(&self) -> &Tensor {
        self.values.last().expect("nonempty")
    }
}

/// `Δw_k ~ N(0, Δt)`, row `r` from `key.domain("noise").child(k).child(r)`.
pub fn brownian(key: StreamKey, step: usize, batch: usize, dim: usize, dt: f64) -> Tensor {
    let z = key.domain("noise").child(step as u64).normal_rows(batch, dim);
    let scale = dt.sqrt();
    Tensor::new(z.into_iter().map(|v| v * scale).collect(), &[batch, dim]).expect("sized")
}

/// Forward-propagate states and values for `batch` trajectories. Every step
/// is on the tape when recording, except the detached prefix inside NOVAS.
pub fn fbsde_rollout<P: SocProblem + ?Sized>(
    problem: &P,
    net: &mut FbsdeNetwork,
    control: &ControlSource<'_>,
    key: StreamKey,
    batch: usize,
) -> Result<RolloutBatch> {
    let (k_steps, dt) = (problem.steps(), problem.dt());
    let (n, m, v) = (problem.state_dim(), problem.control_dim(), problem.noise_dim());
    net.reset(batch);
    let mut x = problem.initial_state(batch);
    let mut value = net.v0.expand(&[batch])?;
    let mut u_prev = Tensor::zeros(&[batch, m]);
    let mut out = RolloutBatch {
        states: vec![x.clone()],
        controls: Vec::with_capacity(k_steps),
        values: vec![value.clone()],
        vx: Vec::with_capacity(k_steps + 1),
        hess: Vec::new(),
        noise: Vec::with_capacity(k_steps),
        increments: Vec::with_capacity(k_steps),
    };
    for k in 0..k_steps {
        let g = net.step(&x)?;
        let u = match control {
            ControlSource::Novas(cfg) => {
                let objective = |cand: &Tensor| hamiltonian(problem, &x, cand, &g.vx, g.hess_col.as_ref());
                let init = GaussianSearchState::isotropic(u_prev.clone(), cfg.sigma0)?;
                novas_optimize(&objective, &init, cfg, key.domain("novas").child(k as u64))?
            }
            ControlSource::Exact(f) => f(&x, &g.vx)?,
        };
        let dw = brownian(key, k, batch, v, dt);
        let f = problem.drift(&x, &u)?;
        let noise = problem.diffuse(&x, &u, &dw)?;
        let cost = problem.running_cost(&x, &u)?;
        let x_next = x.add(&f.mul_scalar(dt))?.add(&noise)?;
        problem.check_state(&x_next, k)?;
        let inc = g.vx.mul(&noise)?.sum_axis(1, false)?.sub(&cost.mul_scalar(dt))?;
        value = value.add(&inc)?;
        debug_assert_eq!(x_next.shape(), &[batch, n]);
        out.vx.push(g.vx);
        if let Some(h) = g.hess_col {
            out.hess.push(h);
        }
        out.controls.push(u.clone());
        out.noise.push(dw);
        out.increments.push(inc);
        out.values.push(value.clone());
        out.states.push(x_next.clone());
        u_prev = u;
        x = x_next;
    }
    let g = net.step(&x)?;
    out.vx.push(g.vx);
    if let Some(h) = g.hess_col {
        out.hess.push(h);
    }
    Ok(out)
}

/// Plain numbers from a batch of trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectories {
    pub batch: usize,
    pub steps: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    /// `[batch × (steps + 1) × n]`
    pub states: Vec<f64>,
    /// `[batch × steps × m]`
    pub controls: Vec<f64>,
    /// `[batch]`
    pub terminal_cost: Vec<f64>,
}

impl Trajectories {
    pub fn from_tensors<P: SocProblem + ?Sized>(problem: &P, states: &[Tensor], controls: &[Tensor]) -> Result<Self> {
        let batch = states[0].shape()[0];
        let (n, m) = (problem.state_dim(), problem.control_dim());
        let steps = controls.len();
        let mut s = vec![0.0; batch * (steps + 1) * n];
        for (k, t) in states.iter().enumerate() {
            for (r, row) in t.data().chunks(n).enumerate() {
                let at = (r * (steps + 1) + k) * n;
                s[at..at + n].copy_from_slice(row);
            }
        }
        let mut c = vec![0.0; batch * steps * m];
        for (k, t) in controls.iter().enumerate() {
            for (r, row) in t.data().chunks(m).enumerate() {
                let at = (r * steps + k) * m;
                c[at..at + m].copy_from_slice(row);
            }
        }
        let terminal_cost = tensor::no_grad(|| problem.terminal(states.last().expect("nonempty")))?.value.to_vec();
        Ok(Trajectories {
            batch,
            steps,
            state_dim: n,
            control_dim: m,
            states: s,
            controls: c,
            terminal_cost,
        })
    }

    pub fn state(&self, row: usize, step: usize) -> &[f64] {
        let at = (row * (self.steps + 1) + step) * self.state_dim;
        &self.states[at..at + self.state_dim]
    }

    pub fn control(&self, row: usize, step: usize) -> &[f64] {
        let at = (row * self.steps + step) * self.control_dim;
        &self.controls[at..at + self.control_dim]
    }

    pub fn terminal_states(&self) -> Vec<&[f64]> {
        (0..self.batch).map(|r| self.state(r, self.steps)).collect()
    }

    /// Per step and state coordinate: (mean, std, min, max) across rows.
    pub fn state_stats(&self) -> Vec<Vec<[f64; 4]>> {
        (0..=self.steps)
            .map(|k| {
                (0..self.state_dim)
                    .map(|d| summarize((0..self.batch).map(|r| self.state(r, k)[d])))
                    .collect()
            })
            .collect()
    }
}

/// (mean, population std, min, max).
pub fn summarize(values: impl Iterator<Item = f64> + Clone) -> [f64; 4] {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.clone().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let min = values.clone().fold(f64::INFINITY, f64::min);
    let max = values.fold(f64::NEG_INFINITY, f64::max);
    [mean, var.sqrt(), min, max]
}

/// Simulate `batch` trajectories under an arbitrary feedback policy
/// `(step, x) → u`, off the tape. Uses the same noise streams as
/// [`fbsde_rollout`] for the same key.
pub fn simulate<P: SocProblem + ?Sized>(
    problem: &P,
    batch: usize,
    key: StreamKey,
    mut policy: impl FnMut(usize, &Tensor) -> Result<Tensor>,
) -> Result<Trajectories> {
    tensor::no_grad(|| {
        let dt = problem.dt();
        let mut x = problem.initial_state(batch);
        let mut states = vec![x.clone()];
        let mut controls = Vec::new();
        for k in 0..problem.steps() {
            let u = policy(k, &x)?;
            let dw = brownian(key, k, batch, problem.noise_dim(), dt);
            let next = x
                .add(&problem.drift(&x, &u)?.mul_scalar(dt))?
                .add(&problem.diffuse(&x, &u, &dw)?)?;
            problem.check_state(&next, k)?;
            controls.push(u);
            states.push(next.clone());
            x = next;
        }
        Trajectories::from_tensors(problem, &states, &controls)
    })
}
