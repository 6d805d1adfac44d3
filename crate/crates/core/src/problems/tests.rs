use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::fbsde::{hamiltonian, simulate, SocProblem};
use crate::novas::{novas_optimize, GaussianSearchState, NovasConfig};
use crate::rng::StreamKey;
use crate::tensor::{self, Tensor};

fn row(v: Vec<f64>) -> Tensor {
    let n = v.len();
    Tensor::new(v, &[1, n]).unwrap()
}

#[test]
fn cartpole_hand_substitution() {
    let cp = CartPole::default();
    let f = cp.drift(&row(vec![0.0; 4]), &row(vec![1.0])).unwrap().to_vec();
    assert_eq!(f, vec![0.0, 0.0, 1.0, -2.0]);
    let f = cp.drift(&row(vec![0.3, 0.0, 0.0, 0.0]), &row(vec![0.0])).unwrap().to_vec();
    assert_eq!(f, vec![0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn cartpole_drift_literal_formula() {
    let cp = CartPole::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let u = rng.random_range(-5.0..5.0);
        let f = cp.drift(&row(s.clone()), &row(vec![u])).unwrap().to_vec();
        let (th, thd) = (s[1], s[3]);
        let d = 1.0 + 0.01 * th.sin();
        let xdd = (u + 0.01 * th.sin() * (0.5 * thd + 9.81 * th.cos())) / d;
        let tdd = (-u * th.cos() - 0.01 * 0.5 * thd * th.cos() * th.sin()) / (0.5 * d);
        let want = [s[2], s[3], xdd, tdd];
        for (a, b) in f.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn cartpole_diffusion_on_velocities() {
    let cp = CartPole::default();
    let sig = cp.diffusion(&row(vec![0.0; 4]), &row(vec![0.0])).unwrap().to_vec();
    assert_eq!(sig, vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.5]);
    let dw = row(vec![0.2, -0.4]);
    let direct = cp.diffuse(&row(vec![0.0; 4]), &row(vec![0.0]), &dw).unwrap().to_vec();
    let via_matrix = cp
        .diffusion(&row(vec![0.0; 4]), &row(vec![0.0]))
        .unwrap()
        .batched_matvec(&dw)
        .unwrap()
        .to_vec();
    assert_eq!(direct, via_matrix);
}

#[test]
fn cartpole_closed_form_properties() {
    let cp = CartPole::default();
    let x = row(vec![0.1, 0.7, -0.2, 0.3]);
    assert_eq!(cp.closed_form_u(&x, &row(vec![0.0; 4])).unwrap().item(), 0.0);
    let vx = row(vec![1.0, -2.0, 3.0, 0.5]);
    let u1 = cp.closed_form_u(&x, &vx).unwrap().item();
    let u2 = cp.closed_form_u(&x, &vx.mul_scalar(2.0)).unwrap().item();
    assert!((u2 - 2.0 * u1).abs() < 1e-12);
    let bad = CartPole { r: 0.0, ..CartPole::default() };
    assert!(bad.closed_form_u(&x, &vx).is_err());
}

fn random_cartpole_pairs(rows: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..rows * 4).map(|_| rng.random_range(-3.0..3.0)).collect();
    let vx: Vec<f64> = (0..rows * 4).map(|_| rng.random_range(-10.0..10.0)).collect();
    (Tensor::new(x, &[rows, 4]).unwrap(), Tensor::new(vx, &[rows, 4]).unwrap())
}

#[test]
fn closed_form_is_hamiltonian_stationary_point() {
    let cp = CartPole::default();
    let (x, vx) = random_cartpole_pairs(50, 2);
    let u = cp.closed_form_u(&x, &vx).unwrap().to_vec();
    for h in [1e-3, -1e-3] {
        let cand: Vec<f64> = u.iter().flat_map(|&v| [v, v + h]).collect();
        let vals = hamiltonian(&cp, &x, &Tensor::new(cand, &[50, 2, 1]).unwrap(), &vx, None)
            .unwrap()
            .to_vec();
        // H is quadratic in u with curvature R, so H(u*+h) − H(u*) = R h²
        for r in vals.chunks(2) {
            assert!((r[1] - r[0] - 0.1 * h * h).abs() < 1e-9);
        }
    }
}

#[test]
fn novas_matches_cartpole_oracle() {
    let cp = CartPole::default();
    let (x, vx) = random_cartpole_pairs(100, 3);
    let star = cp.closed_form_u(&x, &vx).unwrap().to_vec();
    let cfg = NovasConfig {
        samples: 200,
        iters: 50,
        sigma0: 10.0,
        ..NovasConfig::default()
    };
    let obj = |u: &Tensor| hamiltonian(&cp, &x, u, &vx, None);
    let init = GaussianSearchState::isotropic(Tensor::zeros(&[100, 1]), cfg.sigma0).unwrap();
    let u = novas_optimize(&obj, &init, &cfg, StreamKey::new(3)).unwrap().to_vec();
    let hits = u
        .iter()
        .zip(&star)
        .filter(|(a, b)| (*a - *b).abs() < 1e-2 * (1.0 + b.abs()))
        .count();
    assert!(hits >= 98, "{hits}/100");
}

#[test]
fn cartpole_energy_drift_is_first_order() {
    let cp = CartPole {
        noise: 0.0,
        ..CartPole::default()
    };
    let drift_per_step = |dt: f64| {
        let mut x = row(vec![0.0, 2.0, 0.5, 1.0]);
        let e0 = cp.energy(&x).unwrap().item();
        let steps = (0.5 / dt).round() as usize;
        let mut worst: f64 = 0.0;
        let mut prev = e0;
        for _ in 0..steps {
            x = x.add(&cp.drift(&x, &row(vec![0.0])).unwrap().mul_scalar(dt)).unwrap();
            let e = cp.energy(&x).unwrap().item();
            worst = worst.max((e - prev).abs());
            prev = e;
        }
        worst
    };
    let coarse = drift_per_step(0.02);
    let fine = drift_per_step(0.01);
    assert!(coarse < 0.1 * 0.02, "{coarse}");
    assert!(fine < 0.6 * coarse, "{fine} vs {coarse}");
}

fn small_market(seed: u64) -> Market {
    Market::generate(&MarketConfig::default(), seed).unwrap()
}

#[test]
fn market_generation_is_valid_and_replayable() {
    let m = small_market(4);
    assert_eq!(m.n_stocks(), 10);
    assert_eq!(m.traded.len(), 4);
    assert!(m.drift.iter().all(|&d| (-0.05..=0.10).contains(&d)));
    assert_eq!(m, small_market(4));
    let json = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<Market>(&json).unwrap(), m);
    let bad = MarketConfig {
        n_traded: 10,
        ..MarketConfig::default()
    };
    assert!(Market::generate(&bad, 0).is_err());
}

#[test]
fn covariance_rows_have_requested_vols() {
    for factors in [0, 1, 3, 8] {
        let s = synth_covariance(12, StreamKey::new(factors as u64), [0.1, 0.4], factors).unwrap();
        for row in &s {
            let v = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((0.1 - 1e-12..=0.4 + 1e-12).contains(&v), "{v}");
        }
        if factors == 0 {
            for (i, r) in s.iter().enumerate() {
                assert!(r.iter().enumerate().all(|(j, &x)| i == j || x == 0.0));
            }
        }
        // σσᵀ is a Gram matrix: its quadratic forms are nonnegative
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let z: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q: f64 = (0..12)
                .map(|k| (0..12).map(|i| z[i] * s[i][k]).sum::<f64>().powi(2))
                .sum();
            assert!(q >= 0.0);
        }
    }
    assert!(synth_covariance(3, StreamKey::new(0), [0.0, 0.4], 1).is_err());
}

fn portfolio(seed: u64) -> Portfolio {
    Portfolio::new(small_market(seed)).unwrap()
}

#[test]
fn terminal_cost_at_par() {
    let p = portfolio(6);
    let t = p.terminal(&p.initial_state(1)).unwrap();
    let expected = 500.0 * (2f64.ln() / 10.0).powi(2);
    assert!((t.value.item() - expected).abs() < 1e-9);
    assert!((expected - 2.40227).abs() < 1e-5);
    let gw = t.grad.to_vec()[10];
    // ∂φ/∂W = −q log 2 / β
    assert!((gw + 500.0 * 2f64.ln() / 10.0).abs() < 1e-9);
    assert!((gw + 34.657).abs() < 1e-3);
    let mut rich = vec![1.0; 10];
    rich.push(5.0);
    assert!(p.terminal(&row(rich)).unwrap().value.item() < 1e-12);
}

#[test]
fn terminal_derivatives_match_finite_differences() {
    let p = portfolio(7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    for _ in 0..20 {
        let x: Vec<f64> = (0..11).map(|_| rng.random_range(0.7..1.3)).collect();
        let t = p.terminal(&row(x.clone())).unwrap();
        let g = t.grad.to_vec();
        let hc = t.hess_col.unwrap().to_vec();
        let phi = |x: &[f64]| p.terminal(&row(x.to_vec())).unwrap().value.item();
        let grad_at = |x: &[f64]| p.terminal(&row(x.to_vec())).unwrap().grad.to_vec();
        for i in 0..11 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (phi(&up) - phi(&dn)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-4 * (1.0 + g[i].abs()));
        }
        let mut up = x.clone();
        let mut dn = x.clone();
        up[10] += h;
        dn[10] -= h;
        let (gu, gd) = (grad_at(&up), grad_at(&dn));
        for i in 0..11 {
            let fd = (gu[i] - gd[i]) / (2.0 * h);
            assert!((fd - hc[i]).abs() < 1e-4 * (1.0 + hc[i].abs()));
        }
    }
}

#[test]
fn trace_term_matches_full_trace() {
    let p = portfolio(8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, m) = (11, 5);
    for _ in 0..20 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let us: Vec<Vec<f64>> = (0..2).map(|_| (0..m).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        // full ½ tr(V ΣΣᵀ) with V zero except the wealth row and column c
        let full = |u: &[f64]| {
            let sig = p.diffusion(&row(x.clone()), &row(u.to_vec())).unwrap().to_vec();
            let dot = |a: usize, b: usize| (0..10).map(|k| sig[a * 10 + k] * sig[b * 10 + k]).sum::<f64>();
            let mut t = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let v = if a == 10 { c[b] } else if b == 10 { c[a] } else { 0.0 };
                    t += v * dot(a, b);
                }
            }
            0.5 * t
        };
        let cand = Tensor::new(us.concat(), &[1, 2, m]).unwrap();
        let xe = row(x.clone()).unsqueeze(1).unwrap();
        let ce = row(c.clone()).unsqueeze(1).unwrap();
        let t = p.trace_term(&xe, &cand, &ce).unwrap().unwrap().to_vec();
        // only differences in u matter; the stock-stock block is constant
        let want = full(&us[1]) - full(&us[0]);
        assert!(((t[1] - t[0]) - want).abs() < 1e-10, "{} vs {want}", t[1] - t[0]);
        let exact_diag = full(&us[0]);
        assert!((t[0] - exact_diag).abs() < 1e-10);
    }
}

#[test]
fn equal_allocation_and_risk_free_growth() {
    let mut m = small_market(9);
    for r in m.vol.iter_mut() {
        r.iter_mut().for_each(|v| *v = 0.0);
    }
    let p = Portfolio::new(m.clone()).unwrap();
    let x = p.initial_state(1);
    let dt = p.dt();
    // a large cash logit approximates π₁ = 1
    let mut u = vec![-40.0; 5];
    u[0] = 40.0;
    let next = x.add(&p.drift(&x, &row(u)).unwrap().mul_scalar(dt)).unwrap().to_vec();
    assert!((next[10] - (1.0 + 0.01 * dt)).abs() < 1e-12);
    let f = p.drift(&x, &row(vec![0.0; 5])).unwrap().to_vec();
    let mean_mu: f64 = m.traded.iter().map(|&i| m.drift[i]).sum::<f64>();
    assert!((f[10] - (0.01 + mean_mu) / 5.0).abs() < 1e-12);
    // index grows at the mean drift without noise
    let t = simulate(&p, 1, StreamKey::new(1), |_, x| Ok(Tensor::zeros(&[x.shape()[0], 5]))).unwrap();
    for k in 0..=p.steps() {
        let s = t.state(0, k);
        for i in 0..10 {
            let want = (1.0 + m.drift[i] * dt).powi(k as i32);
            assert!((s[i] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn allocations_stay_on_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let u: Vec<f64> = (0..5).map(|_| rng.random_range(-30.0..30.0)).collect();
        let pi = row(u).softmax(1).unwrap().to_vec();
        assert!(pi.iter().all(|&v| v > 0.0));
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    for kind in [Baseline::Equal, Baseline::Random] {
        let a = baseline_control(kind, 3, 5, StreamKey::new(2), 4);
        assert_eq!(a.to_vec(), baseline_control(kind, 3, 5, StreamKey::new(2), 4).to_vec());
        let pi = a.softmax(1).unwrap().to_vec();
        for r in pi.chunks(5) {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if kind == Baseline::Equal {
                assert!(r.iter().all(|&v| v == 0.2));
            }
        }
    }
}

#[test]
fn index_two_ways_and_wealth_stays_positive() {
    let p = portfolio(11);
    let key = StreamKey::new(11);
    let t = simulate(&p, 256, key, |k, x| Ok(baseline_control(Baseline::Random, x.shape()[0], 5, key, k))).unwrap();
    for r in 0..t.batch {
        let mut incremental = 1.0;
        for k in 0..p.steps() {
            let (a, b) = (t.state(r, k), t.state(r, k + 1));
            incremental += (0..10).map(|i| b[i] - a[i]).sum::<f64>() / 10.0;
            let direct = b[..10].iter().sum::<f64>() / 10.0;
            assert!((incremental - direct).abs() < 1e-10);
        }
        assert!(t.state(r, p.steps())[10] > 0.0);
    }
    let bad = row(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -0.1]);
    assert!(matches!(p.check_state(&bad, 3), Err(crate::Error::Absorbing(_))));
}

#[test]
fn equal_and_random_are_comparable_without_drift() {
    let mut m = small_market(12);
    m.drift.iter_mut().for_each(|d| *d = 0.0);
    m.rate = 0.0;
    let vol = 0.2;
    for (i, r) in m.vol.iter_mut().enumerate() {
        r.iter_mut().enumerate().for_each(|(j, v)| *v = if i == j { vol } else { 0.0 });
    }
    let p = Portfolio::new(m).unwrap();
    let key = StreamKey::new(12);
    let mean_and_se = |kind| {
        let t = simulate(&p, 64, key, |k, x| Ok(baseline_control(kind, x.shape()[0], 5, key.domain("u"), k))).unwrap();
        let s = crate::fbsde::summarize(t.terminal_cost.iter().copied());
        (s[0], s[1] / 8.0)
    };
    let (a, sa) = mean_and_se(Baseline::Equal);
    let (b, sb) = mean_and_se(Baseline::Random);
    assert!((a - b).abs() < 3.0 * (sa * sa + sb * sb).sqrt(), "{a}±{sa} vs {b}±{sb}");
    tensor::clear_tape();
}
