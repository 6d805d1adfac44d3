use super::*;
use crate::error::Result;
use crate::nn::{Adam, AdamConfig};
use crate::novas::{GraphMode, NovasConfig};
use crate::problems::{CartPole, Market, MarketConfig, Portfolio};
use crate::rng::StreamKey;
use crate::tensor::{self, Tensor};

/// `dx = 0`, no cost except `φ = x²`.
struct Still {
    steps: usize,
}

impl SocProblem for Still {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> f64 {
        1.0
    }
    fn steps(&self) -> usize {
        self.steps
    }
    fn initial_state(&self, batch: usize) -> Tensor {
        Tensor::full(&[batch, 1], 0.25)
    }
    fn drift(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        let mut shape = problem::lead_shape(x, u)?;
        shape.push(1);
        Ok(Tensor::zeros(&shape))
    }
    fn diffusion(&self, x: &Tensor, _u: &Tensor) -> Result<Tensor> {
        Ok(Tensor::zeros(&[x.shape()[0], 1, 1]))
    }
    fn running_cost(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        Ok(Tensor::zeros(&problem::lead_shape(x, u)?))
    }
    fn terminal(&self, x: &Tensor) -> Result<Terminal> {
        Ok(Terminal {
            value: x.square().sum_axis(1, false)?,
            grad: x.mul_scalar(2.0),
            hess_col: None,
        })
    }
}

fn quick_novas() -> NovasConfig {
    NovasConfig {
        samples: 20,
        iters: 3,
        sigma0: 10.0,
        ..NovasConfig::default()
    }
}

fn cart_net(key: u64) -> FbsdeNetwork {
    FbsdeNetwork::new(4, false, &NetworkConfig::default(), StreamKey::new(key)).unwrap()
}

fn short_cartpole(steps: usize) -> CartPole {
    CartPole {
        steps,
        horizon: 0.02 * steps as f64,
        ..CartPole::default()
    }
}

#[test]
fn hamiltonian_vanishes_without_gradient_or_cost() {
    let p = Portfolio::new(Market::generate(&MarketConfig::default(), 1).unwrap()).unwrap();
    let x = p.initial_state(2);
    let u = Tensor::new((0..30).map(|i| i as f64 * 0.1).collect(), &[2, 3, 5]).unwrap();
    let h = hamiltonian(&p, &x, &u, &Tensor::zeros(&[2, 11]), None).unwrap();
    assert_eq!(h.to_vec(), vec![0.0; 6]);
    let h = hamiltonian(&p, &x, &u, &Tensor::zeros(&[2, 11]), Some(&Tensor::zeros(&[2, 11]))).unwrap();
    assert_eq!(h.to_vec(), vec![0.0; 6]);
    let wrong = Tensor::zeros(&[2, 3, 4]);
    assert!(hamiltonian(&p, &x, &wrong, &Tensor::zeros(&[2, 11]), None).is_err());
}

#[test]
fn cartpole_rollout_shapes() {
    let cp = CartPole::default();
    let mut net = cart_net(2);
    let r = tensor::no_grad(|| {
        fbsde_rollout(&cp, &mut net, &ControlSource::Novas(&quick_novas()), StreamKey::new(2), 3)
    })
    .unwrap();
    assert_eq!(r.states.len(), 76);
    assert_eq!(r.vx.len(), 76);
    assert_eq!(r.controls.len(), 75);
    assert_eq!(r.noise[0].shape(), &[3, 2]);
    let t = Trajectories::from_tensors(&cp, &r.states, &r.controls).unwrap();
    assert_eq!(t.states.len(), 3 * 76 * 4);
    assert_eq!(t.terminal_states().len(), 3);
}

#[test]
fn still_problem_keeps_state_and_value() {
    let p = Still { steps: 7 };
    let mut net = FbsdeNetwork::new(1, false, &NetworkConfig { v0_init: 0.8, ..NetworkConfig::default() }, StreamKey::new(3))
        .unwrap();
    let r = fbsde_rollout(&p, &mut net, &ControlSource::Novas(&quick_novas()), StreamKey::new(3), 4).unwrap();
    assert_eq!(r.terminal_state().to_vec(), vec![0.25; 4]);
    assert_eq!(r.terminal_value().to_vec(), vec![0.8; 4]);
    tensor::clear_tape();
}

#[test]
fn deterministic_market_keeps_value() {
    let mut m = Market::generate(&MarketConfig::default(), 4).unwrap();
    m.vol.iter_mut().flatten().for_each(|v| *v = 0.0);
    let p = Portfolio::new(m).unwrap();
    let mut net = FbsdeNetwork::new(11, true, &NetworkConfig { v0_init: 1.5, ..NetworkConfig::default() }, StreamKey::new(4))
        .unwrap();
    let r = tensor::no_grad(|| fbsde_rollout(&p, &mut net, &ControlSource::Novas(&quick_novas()), StreamKey::new(4), 3))
        .unwrap();
    assert_eq!(r.terminal_value().to_vec(), vec![1.5; 3]);
    assert_eq!(r.hess.len(), r.vx.len());
}

#[test]
fn value_increments_telescope_and_share_noise() {
    let cp = CartPole::default();
    let mut net = cart_net(5);
    let r = tensor::no_grad(|| fbsde_rollout(&cp, &mut net, &ControlSource::Novas(&quick_novas()), StreamKey::new(5), 4))
        .unwrap();
    let mut sum = r.values[0].to_vec();
    for inc in &r.increments {
        for (s, d) in sum.iter_mut().zip(inc.to_vec()) {
            *s += d;
        }
    }
    for (a, b) in sum.iter().zip(r.terminal_value().to_vec()) {
        assert!((a - b).abs() < 1e-10);
    }
    let dt = cp.dt();
    tensor::no_grad(|| {
        for k in 0..cp.steps() {
            let (x, u, dw) = (&r.states[k], &r.controls[k], &r.noise[k]);
            let step = cp.diffuse(x, u, dw).unwrap();
            let next = x.add(&cp.drift(x, u).unwrap().mul_scalar(dt)).unwrap().add(&step).unwrap();
            assert_eq!(next.to_vec(), r.states[k + 1].to_vec());
            let inc = r.vx[k]
                .mul(&step)
                .unwrap()
                .sum_axis(1, false)
                .unwrap()
                .sub(&cp.running_cost(x, u).unwrap().mul_scalar(dt))
                .unwrap();
            assert_eq!(inc.to_vec(), r.increments[k].to_vec());
            // Δw ~ N(0, Δt) scaling
            assert_eq!(dw.to_vec(), brownian(StreamKey::new(5), k, 4, 2, dt).to_vec());
        }
    });
}

#[test]
fn noise_variance_is_dt() {
    let dw = brownian(StreamKey::new(6), 0, 20_000, 1, 0.02).to_vec();
    let var = dw.iter().map(|v| v * v).sum::<f64>() / dw.len() as f64;
    assert!((var - 0.02).abs() < 0.02 * 0.05, "{var}");
}

#[test]
fn novas_controls_track_closed_form_along_rollout() {
    let cp = CartPole::default();
    let mut net = cart_net(7);
    let inference = NovasConfig {
        samples: 200,
        iters: 50,
        sigma0: 10.0,
        ..NovasConfig::default()
    };
    let r = tensor::no_grad(|| fbsde_rollout(&cp, &mut net, &ControlSource::Novas(&inference), StreamKey::new(7), 8))
        .unwrap();
    tensor::no_grad(|| {
        for k in 0..cp.steps() {
            let star = cp.closed_form_u(&r.states[k], &r.vx[k]).unwrap().to_vec();
            for (a, b) in r.controls[k].to_vec().iter().zip(&star) {
                assert!((a - b).abs() < 5e-2, "step {k}: {a} vs {b}");
            }
        }
    });
    // the exact source produces the oracle controls directly
    let exact = |x: &Tensor, vx: &Tensor| cp.closed_form_u(x, vx);
    let e = tensor::no_grad(|| fbsde_rollout(&cp, &mut net, &ControlSource::Exact(&exact), StreamKey::new(7), 8)).unwrap();
    let first = cp.closed_form_u(&e.states[0], &e.vx[0]).unwrap().to_vec();
    assert_eq!(e.controls[0].to_vec(), first);
}

fn loss_config() -> LossConfig {
    LossConfig::cartpole()
}

#[test]
fn perfect_terminal_match_has_zero_loss() {
    let cp = CartPole::default();
    let target = Tensor::new(cp.target.to_vec(), &[1, 4]).unwrap();
    let r = RolloutBatch {
        states: vec![target.clone()],
        controls: vec![],
        values: vec![Tensor::vector(vec![0.0])],
        vx: vec![Tensor::zeros(&[1, 4])],
        hess: vec![],
        noise: vec![],
        increments: vec![],
    };
    let l = fbsde_loss(&r, &cp, &loss_config()).unwrap();
    assert_eq!(l.total.item(), 0.0);
    let short = LossConfig {
        weights: vec![1.0; 5],
        delta: 50.0,
    };
    assert!(fbsde_loss(&r, &cp, &short).is_err());
    assert!(fbsde_loss(&r, &cp, &LossConfig::portfolio()).is_err());
}

#[test]
fn loss_terms_follow_definition() {
    let cp = CartPole::default();
    let x = Tensor::new(vec![0.0, 3.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0], &[2, 4]).unwrap();
    let r = RolloutBatch {
        states: vec![x],
        controls: vec![],
        values: vec![Tensor::vector(vec![1.0, 2.0])],
        vx: vec![Tensor::zeros(&[2, 4])],
        hess: vec![],
        noise: vec![],
        increments: vec![],
    };
    let l = fbsde_loss(&r, &cp, &loss_config()).unwrap();
    let pi = std::f64::consts::PI;
    let phi = [10.0 * (3.0 - pi).powi(2) + 3.0 * 0.01, 10.0 * pi * pi];
    let grad = [[0.0, 20.0 * (3.0 - pi), 0.6, 0.0], [0.0, -20.0 * pi, 0.0, 0.0]];
    let h = |a: f64| if a.abs() < 50.0 { a * a } else { 50.0 * (2.0 * a.abs() - 50.0) };
    let t0 = (h(1.0 - phi[0]) + h(2.0 - phi[1])) / 2.0;
    let t1 = grad.iter().flatten().map(|g| h(-g)).sum::<f64>() / 2.0;
    let t3 = (phi[0] * phi[0] + phi[1] * phi[1]) / 2.0;
    let t4 = grad.iter().flatten().map(|g| g * g).sum::<f64>() / 2.0;
    let want = [t0, t1, 0.0, t3, t4, 0.0];
    for (a, b) in l.terms.iter().zip(want) {
        assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

fn tape_per_training_step(steps: usize, iters: usize, samples: usize) -> usize {
    let cp = short_cartpole(steps);
    let mut net = cart_net(8);
    let cfg = NovasConfig {
        samples,
        iters,
        mode: GraphMode::Detached,
        ..quick_novas()
    };
    tensor::clear_tape();
    let r = fbsde_rollout(&cp, &mut net, &ControlSource::Novas(&cfg), StreamKey::new(8), 4).unwrap();
    fbsde_loss(&r, &cp, &loss_config()).unwrap();
    let n = tensor::tape_len();
    tensor::clear_tape();
    n
}

#[test]
fn tape_size_scaling() {
    let base = tape_per_training_step(5, 2, 20);
    assert_eq!(base, tape_per_training_step(5, 9, 20));
    assert_eq!(base, tape_per_training_step(5, 2, 60));
    let d1 = tape_per_training_step(10, 2, 20) - base;
    let d2 = tape_per_training_step(15, 2, 20) - tape_per_training_step(10, 2, 20);
    assert_eq!(d1, d2);
}

fn tiny_train(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        batch: 4,
        optimizer: AdamConfig::with_lr(5e-3),
        loss: loss_config(),
        novas: quick_novas(),
        val_every: 2,
        val_batch: 4,
    }
}

#[test]
fn training_replays_and_logs() {
    let cp = short_cartpole(6);
    let run = |iters| {
        let mut net = cart_net(9);
        let mut adam = Adam::new(crate::nn::Module::parameters(&net), AdamConfig::with_lr(5e-3));
        let mut seen = 0;
        let out = train_fbsde(&cp, &mut net, &mut adam, &tiny_train(iters), StreamKey::new(9), |_| seen += 1).unwrap();
        assert_eq!(seen, iters.max(1));
        out
    };
    let none = run(0);
    assert_eq!(none.records.len(), 1);
    assert!(none.best.is_none());
    let initial = &none.records[0];
    assert_eq!(initial.iteration, 0);
    assert!(initial.loss.is_finite() && initial.val_loss.is_some());
    let a = run(4);
    let b = run(4);
    assert_eq!(a.records, b.records);
    assert_eq!(initial.loss, a.records[0].loss);
    assert!(a.records.iter().all(|r| r.loss.is_finite()));
    assert_eq!(a.records.iter().filter(|r| r.val_loss.is_some()).count(), 2);
    assert!(a.best.is_some());
}

#[test]
fn evaluation_statistics() {
    let mut net = cart_net(10);
    let cp = short_cartpole(10);
    let a = evaluate_policy(&cp, &mut net, &quick_novas(), 5, StreamKey::new(11)).unwrap();
    let b = evaluate_policy(&cp, &mut net, &quick_novas(), 5, StreamKey::new(11)).unwrap();
    assert_eq!(a.state_stats.len(), 11);
    assert_eq!(a.trajectories, b.trajectories);
    assert_eq!(a.terminal_cost, b.terminal_cost);
}

#[test]
fn deterministic_problem_has_no_spread() {
    let quiet = CartPole {
        noise: 0.0,
        ..short_cartpole(10)
    };
    let exact = |x: &Tensor, vx: &Tensor| quiet.closed_form_u(x, vx);
    let mut net = cart_net(12);
    let r = tensor::no_grad(|| fbsde_rollout(&quiet, &mut net, &ControlSource::Exact(&exact), StreamKey::new(12), 6))
        .unwrap();
    let t = Trajectories::from_tensors(&quiet, &r.states, &r.controls).unwrap();
    for k in 0..=t.steps {
        assert!((1..t.batch).all(|row| t.state(row, k) == t.state(0, k)));
    }
    for step in t.state_stats() {
        assert!(step.iter().all(|s| s[1] <= 1e-12 * (1.0 + s[0].abs())));
    }
}

#[test]
fn trainable_initial_gradient() {
    let cfg = NetworkConfig {
        trainable_vx0: true,
        ..NetworkConfig::default()
    };
    let mut net = FbsdeNetwork::new(4, false, &cfg, StreamKey::new(13)).unwrap();
    net.reset(2);
    let first = net.step(&Tensor::ones(&[2, 4])).unwrap();
    assert_eq!(first.vx.to_vec(), vec![0.0; 8]);
    let second = net.step(&Tensor::ones(&[2, 4])).unwrap();
    assert_ne!(second.vx.to_vec(), vec![0.0; 8]);
    let names: Vec<String> = crate::nn::Module::parameters(&net).into_iter().map(|(n, _)| n).collect();
    assert!(names.contains(&"vx0".to_string()) && names.contains(&"v0".to_string()));
    tensor::clear_tape();
}

#[test]
fn head_scales_multiply_outputs() {
    let cfg = NetworkConfig {
        vx_scale: vec![1.0, 2.0, -3.0, 0.5, 10.0],
        hess_scale: vec![4.0; 5],
        ..NetworkConfig::default()
    };
    let mut plain = FbsdeNetwork::new(5, true, &NetworkConfig::default(), StreamKey::new(3)).unwrap();
    let mut scaled = FbsdeNetwork::new(5, true, &cfg, StreamKey::new(3)).unwrap();
    let x = Tensor::new((0..10).map(|i| i as f64 * 0.1).collect(), &[2, 5]).unwrap();
    plain.reset(2);
    scaled.reset(2);
    let a = plain.step(&x).unwrap();
    let b = scaled.step(&x).unwrap();
    for (k, (u, v)) in a.vx.to_vec().iter().zip(b.vx.to_vec()).enumerate() {
        assert_eq!(u * cfg.vx_scale[k % 5], v);
    }
    for (u, v) in a.hess_col.unwrap().to_vec().iter().zip(b.hess_col.unwrap().to_vec()) {
        assert_eq!(u * 4.0, v);
    }
    let bad = NetworkConfig {
        vx_scale: vec![1.0; 4],
        ..NetworkConfig::default()
    };
    assert!(FbsdeNetwork::new(5, true, &bad, StreamKey::new(3)).is_err());
    tensor::clear_tape();
}
