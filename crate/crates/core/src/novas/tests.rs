use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::rng::StreamKey;
use crate::tensor;
use crate::testutil::max_grad_error;

fn cfg() -> NovasConfig {
    NovasConfig::default()
}

fn row_sums(w: &Tensor) -> Vec<f64> {
    let m = w.shape()[1];
    w.data().chunks(m).map(|r| r.iter().sum()).collect()
}

/// `-(x - c)²` summed over the last axis, maximized at `c`.
fn concave(c: f64) -> impl Fn(&Tensor) -> crate::Result<Tensor> {
    move |x: &Tensor| Ok(x.add_scalar(-c).square().sum_axis(2, false)?.neg())
}

fn scalar_state(batch: usize, mu: f64, sigma: f64) -> GaussianSearchState {
    GaussianSearchState::isotropic(Tensor::full(&[batch, 1], mu), sigma).unwrap()
}

#[test]
fn exp_weights_match_softmax() {
    let c = NovasConfig {
        normalize: false,
        kappa: 1.0,
        ..cfg()
    };
    let w = shape_weights(&Tensor::new(vec![0.0, 1.0], &[1, 2]).unwrap(), &c).unwrap();
    let w = w.to_vec();
    assert!((w[0] - 0.26894).abs() < 1e-5 && (w[1] - 0.73106).abs() < 1e-5, "{w:?}");
}

#[test]
fn equal_values_give_uniform_weights() {
    for shape in [ShapeFunction::Exp, ShapeFunction::Sigmoid] {
        for normalize in [true, false] {
            let c = NovasConfig {
                shape,
                normalize,
                samples: 4,
                ..cfg()
            };
            let w = shape_weights(&Tensor::full(&[3, 4], 2.5), &c).unwrap();
            assert!(w.to_vec().iter().all(|&v| v == 0.25), "{shape:?} {normalize}");
        }
    }
}

#[test]
fn nan_values_are_rejected() {
    let v = Tensor::new(vec![0.0, f64::NAN], &[1, 2]).unwrap();
    assert!(matches!(shape_weights(&v, &cfg()), Err(crate::Error::NonFiniteObjective)));
}

#[test]
fn weights_form_a_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..1000 {
        let m = rng.random_range(2..30);
        let rows = rng.random_range(1..4);
        // coarse grid so ties are common
        let v: Vec<f64> = (0..rows * m).map(|_| rng.random_range(-3..3) as f64 * 0.5).collect();
        let c = NovasConfig {
            samples: m,
            shape: if trial % 2 == 0 { ShapeFunction::Exp } else { ShapeFunction::Sigmoid },
            normalize: trial % 3 != 0,
            kappa: rng.random_range(0.0..20.0),
            ..cfg()
        };
        let w = shape_weights(&Tensor::new(v, &[rows, m]).unwrap(), &c).unwrap();
        assert!(w.to_vec().iter().all(|&x| x >= 0.0));
        for s in row_sums(&w) {
            assert!((s - 1.0).abs() <= 1e-12, "trial {trial}: {s}");
        }
    }
}

#[test]
fn normalized_weights_are_affine_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..1000 {
        let v: Vec<f64> = (0..20).map(|_| rng.random_range(-5.0..5.0)).collect();
        let a = rng.random_range(0.1..10.0);
        let b = rng.random_range(-10.0..10.0);
        let c = NovasConfig {
            samples: 10,
            shape: if trial % 2 == 0 { ShapeFunction::Exp } else { ShapeFunction::Sigmoid },
            ..cfg()
        };
        let w1 = shape_weights(&Tensor::new(v.clone(), &[2, 10]).unwrap(), &c).unwrap();
        let moved = v.iter().map(|x| a * x + b).collect();
        let w2 = shape_weights(&Tensor::new(moved, &[2, 10]).unwrap(), &c).unwrap();
        for (p, q) in w1.to_vec().iter().zip(w2.to_vec()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn variance_floor_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..1000 {
        let c = NovasConfig {
            samples: rng.random_range(2..20),
            iters: rng.random_range(1..6),
            kappa: rng.random_range(0.0..50.0),
            shape: if trial % 2 == 0 { ShapeFunction::Exp } else { ShapeFunction::Sigmoid },
            ..cfg()
        };
        let init = scalar_state(2, rng.random_range(-3.0..3.0), rng.random_range(1e-3..3.0));
        let s = tensor::no_grad(|| novas_search(&concave(1.0), &init, &c, StreamKey::new(trial)))
            .unwrap();
        let floor = c.epsilon.sqrt() - 1e-12;
        assert!(s.sigma.to_vec().iter().all(|&v| v >= floor));
    }
}

#[test]
fn full_step_is_weighted_sample_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..1000 {
        let m = rng.random_range(2..20);
        let c = NovasConfig {
            samples: m,
            lr: 1.0,
            kappa: rng.random_range(0.0..10.0),
            ..cfg()
        };
        let mu = Tensor::new(vec![rng.random_range(-2.0..2.0), 0.5], &[1, 2]).unwrap();
        let sigma = Tensor::new(vec![rng.random_range(0.1..2.0), 1.0], &[1, 2]).unwrap();
        let init = GaussianSearchState::new(mu.clone(), sigma.clone()).unwrap();
        let key = StreamKey::new(trial);
        let obj = |x: &Tensor| -> crate::Result<Tensor> { Ok(x.sin().sum_axis(2, false)?) };
        let next = novas_step(&init, &obj, &c, key).unwrap();
        // replay the sampling and weighting
        let z = key.normal_rows(1, m * 2);
        let x: Vec<f64> = z
            .chunks(2)
            .flat_map(|p| [mu.data()[0] + sigma.data()[0] * p[0], 0.5 + p[1]])
            .collect();
        let xt = Tensor::new(x.clone(), &[1, m, 2]).unwrap();
        let w = shape_weights(&obj(&xt).unwrap().neg(), &c).unwrap().to_vec();
        for d in 0..2 {
            let mean: f64 = (0..m).map(|j| w[j] * x[j * 2 + d]).sum();
            assert!((next.mu.data()[d] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_objective_keeps_mean_in_expectation() {
    let c = NovasConfig {
        samples: 50,
        lr: 0.5,
        ..cfg()
    };
    let obj = |x: &Tensor| -> crate::Result<Tensor> { Ok(Tensor::zeros(&x.shape()[..2])) };
    let init = scalar_state(1, 1.0, 1.0);
    let mut total = 0.0;
    let n = 2000;
    for seed in 0..n {
        let key = StreamKey::new(seed);
        let next = novas_step(&init, &obj, &c, key).unwrap();
        let sample_mean: f64 = key.normal_rows(1, 50).iter().map(|z| 1.0 + z).sum::<f64>() / 50.0;
        let moved = next.mu.item() - 1.0;
        assert!((moved - 0.5 * (sample_mean - 1.0)).abs() < 1e-12);
        total += next.mu.item();
    }
    // standard error of the mean is 0.5 / sqrt(50 · 2000)
    assert!((total / n as f64 - 1.0).abs() < 5.0 * 0.5 / (50.0 * n as f64).sqrt());
}

fn success_rate(c: &NovasConfig, seeds: u64) -> usize {
    (0..seeds)
        .filter(|&seed| {
            let init = scalar_state(1, 0.0, 2.0);
            let mu = tensor::no_grad(|| novas_optimize(&concave(3.0), &init, c, StreamKey::new(seed)))
                .unwrap();
            (mu.item() - 3.0).abs() < 0.1
        })
        .count()
}

#[test]
fn converges_on_concave_quadratic() {
    let c = NovasConfig {
        maximize: true,
        ..cfg()
    };
    let hits = success_rate(&c, 100);
    assert!(hits >= 95, "{hits}/100");
}

#[test]
#[ignore = "tuning study, prints a table"]
fn kappa_alpha_study() {
    for shape in [ShapeFunction::Exp, ShapeFunction::Sigmoid] {
        for kappa in [1.0, 2.0, 5.0, 10.0, 20.0] {
            for lr in [0.25, 0.5, 1.0] {
                let c = NovasConfig {
                    maximize: true,
                    shape,
                    kappa,
                    lr,
                    ..cfg()
                };
                println!("{shape:?} kappa={kappa} lr={lr}: {}/100", success_rate(&c, 100));
            }
        }
    }
}

/// `Σ (x − c)²` with a trainable center `c: [dim]`.
fn bowl(c: &Tensor) -> impl Fn(&Tensor) -> crate::Result<Tensor> + '_ {
    move |x: &Tensor| Ok(x.sub(c)?.square().sum_axis(2, false)?)
}

#[test]
fn modes_agree_bit_for_bit() {
    let c = Tensor::param(vec![0.7, -1.2], &[2]).unwrap();
    let init = GaussianSearchState::isotropic(Tensor::zeros(&[3, 2]), 1.5).unwrap();
    for iters in [1, 2, 7] {
        let mut outs = Vec::new();
        for mode in [GraphMode::Detached, GraphMode::Unrolled] {
            let cf = NovasConfig {
                iters,
                mode,
                ..cfg()
            };
            outs.push(novas_optimize(&bowl(&c), &init, &cf, StreamKey::new(9)).unwrap().to_vec());
            tensor::clear_tape();
        }
        assert_eq!(outs[0], outs[1], "iters={iters}");
    }
}

fn tape_after(mode: GraphMode, iters: usize) -> usize {
    let c = Tensor::param(vec![0.7, -1.2], &[2]).unwrap();
    let init = GaussianSearchState::isotropic(Tensor::zeros(&[3, 2]), 1.5).unwrap();
    let cf = NovasConfig {
        iters,
        mode,
        ..cfg()
    };
    tensor::clear_tape();
    novas_optimize(&bowl(&c), &init, &cf, StreamKey::new(9)).unwrap();
    let n = tensor::tape_len();
    tensor::clear_tape();
    n
}

#[test]
fn tape_size_by_mode() {
    assert_eq!(tape_after(GraphMode::Detached, 1), tape_after(GraphMode::Unrolled, 1));
    let detached = tape_after(GraphMode::Detached, 2);
    assert!(detached > 0);
    assert_eq!(detached, tape_after(GraphMode::Detached, 20));
    let per_step = tape_after(GraphMode::Unrolled, 7) - tape_after(GraphMode::Unrolled, 2);
    assert!(per_step > 0);
    assert_eq!(tape_after(GraphMode::Unrolled, 12) - tape_after(GraphMode::Unrolled, 7), per_step);
}

#[test]
fn detached_gradient_is_last_step_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..20 {
        let c = Tensor::param(vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)], &[2])
            .unwrap();
        let init = GaussianSearchState::isotropic(Tensor::zeros(&[2, 2]), 2.0).unwrap();
        let cf = NovasConfig {
            iters: 4,
            kappa: 3.0,
            ..cfg()
        };
        let key = StreamKey::new(100 + trial);
        let mu = novas_optimize(&bowl(&c), &init, &cf, key).unwrap();
        tensor::backward(&mu.square().sum_all()).unwrap();
        let detached = c.grad().unwrap();
        c.zero_grad();
        tensor::clear_tape();

        let frozen = tensor::no_grad(|| {
            let mut s = init.clone();
            for i in 0..3 {
                s = novas_step(&s, &bowl(&c), &cf, key.child(i)).unwrap();
            }
            s
        });
        let last = |p: &[Tensor]| {
            novas_step(&frozen, &bowl(&p[0]), &cf, key.child(3)).unwrap().mu.square().sum_all()
        };
        tensor::backward(&last(std::slice::from_ref(&c))).unwrap();
        let reference = c.grad().unwrap();
        c.zero_grad();
        tensor::clear_tape();
        for (a, b) in detached.iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let err = max_grad_error(std::slice::from_ref(&c), &last);
        assert!(err < 1e-3, "trial {trial}: {err}");
    }
}

#[test]
fn trajectories_ignore_affine_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..1000 {
        let a = rng.random_range(0.1..10.0);
        let b = rng.random_range(-10.0..10.0);
        let shape = if trial % 2 == 0 { ShapeFunction::Exp } else { ShapeFunction::Sigmoid };
        let cf = NovasConfig {
            samples: 20,
            shape,
            ..cfg()
        };
        let f = |x: &Tensor| -> crate::Result<Tensor> { Ok(x.sin().add(&x.mul_scalar(0.3).square())?.sum_axis(2, false)?) };
        let g = |x: &Tensor| -> crate::Result<Tensor> { Ok(f(x)?.mul_scalar(a).add_scalar(b)) };
        let key = StreamKey::new(trial);
        let mut s1 = scalar_state(2, 1.0, 2.0);
        let mut s2 = s1.clone();
        for i in 0..5 {
            s1 = novas_step(&s1, &f, &cf, key.child(i)).unwrap();
            s2 = novas_step(&s2, &g, &cf, key.child(i)).unwrap();
            for (p, q) in s1.mu.to_vec().iter().zip(s2.mu.to_vec()) {
                assert!((p - q).abs() < 1e-9, "trial {trial} step {i}: {p} vs {q}");
            }
        }
    }
}

#[test]
fn matches_analytic_quadratic_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rows = 100;
    let a: Vec<f64> = (0..rows * 2).map(|_| rng.random_range(0.2..2.0)).collect();
    let b: Vec<f64> = (0..rows * 2).map(|_| rng.random_range(-5.0..5.0)).collect();
    let at = Tensor::new(a.clone(), &[rows, 1, 2]).unwrap();
    let bt = Tensor::new(b.clone(), &[rows, 1, 2]).unwrap();
    let h = |u: &Tensor| -> crate::Result<Tensor> {
        Ok(at.mul(&u.square())?.add(&bt.mul(u)?)?.sum_axis(2, false)?)
    };
    let cf = NovasConfig {
        samples: 200,
        iters: 50,
        ..cfg()
    };
    let init = GaussianSearchState::isotropic(Tensor::zeros(&[rows, 2]), 10.0).unwrap();
    let u = novas_optimize(&h, &init, &cf, StreamKey::new(12)).unwrap().to_vec();
    for i in 0..rows * 2 {
        let star = -b[i] / (2.0 * a[i]);
        assert!((u[i] - star).abs() < 1e-2 * (1.0 + star.abs()), "{i}: {} vs {star}", u[i]);
    }
}

#[test]
fn objective_errors_surface() {
    let init = scalar_state(2, 0.0, 1.0);
    let wrong = |x: &Tensor| -> crate::Result<Tensor> { Ok(x.sum_all()) };
    assert!(matches!(
        novas_step(&init, &wrong, &cfg(), StreamKey::new(0)),
        Err(crate::Error::ObjectiveShape { .. })
    ));
    let nan = |x: &Tensor| -> crate::Result<Tensor> { Ok(Tensor::full(&x.shape()[..2], f64::NAN)) };
    assert!(matches!(
        novas_step(&init, &nan, &cfg(), StreamKey::new(0)),
        Err(crate::Error::NonFiniteObjective)
    ));
    let bad = NovasConfig { samples: 1, ..cfg() };
    assert!(novas_optimize(&concave(0.0), &init, &bad, StreamKey::new(0)).is_err());
}

fn cem(k: usize) -> CemConfig {
    CemConfig {
        samples: 100,
        elites: k,
        iters: 10,
        epsilon: 1e-3,
        maximize: true,
    }
}

#[test]
fn cem_with_all_elites_is_uniform_novas() {
    let uniform = NovasConfig {
        kappa: 0.0,
        lr: 1.0,
        maximize: true,
        ..cfg()
    };
    let init = GaussianSearchState::isotropic(Tensor::new(vec![0.5, -1.0], &[1, 2]).unwrap(), 1.3)
        .unwrap();
    for seed in 0..20 {
        let key = StreamKey::new(seed);
        let a = cem_step(&init, &concave(3.0), &cem(100), key).unwrap();
        let b = novas_step(&init, &concave(3.0), &uniform, key).unwrap();
        assert_eq!(a.mu.to_vec(), b.mu.to_vec());
        assert_eq!(a.sigma.to_vec(), b.sigma.to_vec());
    }
}

#[test]
fn cem_converges_and_replays() {
    let init = scalar_state(1, 0.0, 2.0);
    let hits = (0..100)
        .filter(|&seed| {
            let mu = cem_optimize(&concave(3.0), &init, &cem(10), StreamKey::new(seed)).unwrap();
            (mu.item() - 3.0).abs() < 0.1
        })
        .count();
    assert!(hits >= 95, "{hits}/100");
    let a = cem_optimize(&concave(3.0), &init, &cem(10), StreamKey::new(5)).unwrap();
    let b = cem_optimize(&concave(3.0), &init, &cem(10), StreamKey::new(5)).unwrap();
    assert_eq!(a.to_vec(), b.to_vec());
}

#[test]
fn cem_rejects_too_many_elites() {
    let init = scalar_state(1, 0.0, 2.0);
    assert!(cem_step(&init, &concave(3.0), &cem(101), StreamKey::new(0)).is_err());
}

struct Parabola {
    c: Tensor,
}

impl DifferentiableObjective for Parabola {
    fn value_and_gradient(&self, y: &Tensor) -> crate::Result<(Tensor, Tensor)> {
        let d = y.sub(&self.c)?;
        Ok((d.square().sum_axis(1, false)?, d.mul_scalar(2.0)))
    }
}

#[test]
fn gd_follows_closed_form_on_parabola() {
    let obj = Parabola {
        c: Tensor::vector(vec![1.5]),
    };
    let y0 = Tensor::new(vec![-2.0], &[1, 1]).unwrap();
    for steps in 0..8 {
        let y = unrolled_gd(&obj, &y0, steps, 0.1).unwrap().item();
        let want = 1.5 + 0.8f64.powi(steps as i32) * (-3.5);
        assert!((y - want).abs() < 1e-12);
    }
    assert_eq!(unrolled_gd(&obj, &y0, 5, 0.0).unwrap().item(), -2.0);
}

#[test]
fn gd_rejects_non_finite_gradient() {
    let obj = Parabola {
        c: Tensor::vector(vec![f64::INFINITY]),
    };
    let y0 = Tensor::new(vec![0.0], &[1, 1]).unwrap();
    assert!(matches!(
        unrolled_gd(&obj, &y0, 2, 0.1),
        Err(crate::Error::NonFinite { step: 0, .. })
    ));
}

struct EnergyOf<'a> {
    net: &'a crate::nn::Mlp,
    x: Tensor,
}

impl DifferentiableObjective for EnergyOf<'_> {
    fn value_and_gradient(&self, y: &Tensor) -> crate::Result<(Tensor, Tensor)> {
        let (e, g) = self.net.value_and_input_gradient(&Tensor::concat(&[&self.x, y], 1)?)?;
        Ok((e.reshape(&[y.shape()[0]])?, g.slice(1, 1, 1)?))
    }
}

#[test]
fn gd_unroll_gradient_matches_finite_differences() {
    use crate::nn::{Activation, Module, Mlp};
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..20 {
        let net = Mlp::new(
            &[2, 8, 1],
            vec![Activation::Softplus, Activation::Identity],
            StreamKey::new(500 + trial),
        )
        .unwrap();
        let x = Tensor::new((0..3).map(|_| rng.random_range(-2.0..2.0)).collect(), &[3, 1]).unwrap();
        let y0 = Tensor::new((0..3).map(|_| rng.random_range(-2.0..2.0)).collect(), &[3, 1]).unwrap();
        let obj = EnergyOf { net: &net, x };
        let params: Vec<Tensor> = net.parameters().into_iter().map(|(_, t)| t).collect();
        let err = max_grad_error(&params, &|_| {
            unrolled_gd(&obj, &y0, 2, 0.3).unwrap().square().sum_all()
        });
        assert!(err < 1e-4, "trial {trial}: {err}");
    }
}

