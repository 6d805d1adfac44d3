//! Finite-difference oracle shared by unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{self, Tensor};

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Compare tape gradients of `f(inputs)` against central differences.
/// Returns the worst relative error `|g - fd| / max(1, |g|)`.
pub fn max_grad_error(inputs: &[Tensor], f: &dyn Fn(&[Tensor]) -> Tensor) -> f64 {
    let h = 1e-5;
    tensor::clear_tape();
    for x in inputs {
        x.zero_grad();
    }
    let loss = f(inputs);
    tensor::backward(&loss).unwrap();
    tensor::clear_tape();
    let mut worst: f64 = 0.0;
    for x in inputs {
        let g = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
        for i in 0..x.numel() {
            let orig = x.data()[i];
            x.update_data(|d| d[i] = orig + h);
            let up = tensor::no_grad(|| f(inputs).item());
            x.update_data(|d| d[i] = orig - h);
            let down = tensor::no_grad(|| f(inputs).item());
            x.update_data(|d| d[i] = orig);
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(1.0));
        }
    }
    worst
}
