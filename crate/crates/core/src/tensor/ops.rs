use super::shape::{aligned_strides, broadcast_shape, for_each_broadcast, reduce_to};
use super::{BackwardFn, Result, Tensor, TensorError};

fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_f(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tensor {
    fn binary<F, DA, DB>(
        &self,
        other: &Tensor,
        op: &'static str,
        f: F,
        da: DA,
        db: DB,
    ) -> Result<Tensor>
    where
        F: Fn(f64, f64) -> f64,
        DA: Fn(f64, f64) -> f64 + 'static,
        DB: Fn(f64, f64) -> f64 + 'static,
    {
        let (sa, sb) = (self.shape(), other.shape());
        let out = broadcast_shape(sa, sb).ok_or_else(|| TensorError::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let a = self.data();
        let b = other.data();
        let data: Vec<f64> = if sa == sb {
            a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
        } else if b.len() == 1 && sa == out.as_slice() {
            let y = b[0];
            a.iter().map(|&x| f(x, y)).collect()
        } else {
            let mut d = vec![0.0; super::numel_of(&out)];
            let (ta, tb) = (aligned_strides(sa, &out), aligned_strides(sb, &out));
            for_each_broadcast(&out, &ta, &tb, |o, i, j| d[o] = f(a[i], b[j]));
            d
        };
        drop(a);
        drop(b);
        let (lhs, rhs) = (self.clone(), other.clone());
        let out_shape = out.clone();
        Ok(Tensor::from_op(data, out, &[self, other], move || {
            Box::new(move |g: &[f64]| {
                let a = lhs.data();
                let b = rhs.data();
                let (sa, sb) = (lhs.shape(), rhs.shape());
                let want_a = lhs.requires_grad();
                let want_b = rhs.requires_grad();
                let mut ga = want_a.then(|| vec![0.0; a.len()]);
                let mut gb = want_b.then(|| vec![0.0; b.len()]);
                if sa == sb {
                    for o in 0..g.len() {
                        if let Some(ga) = ga.as_mut() {
                            ga[o] = da(a[o], b[o]) * g[o];
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[o] = db(a[o], b[o]) * g[o];
                        }
                    }
                } else {
                    let (ta, tb) = (aligned_strides(sa, &out_shape), aligned_strides(sb, &out_shape));
                    for_each_broadcast(&out_shape, &ta, &tb, |o, i, j| {
                        if let Some(ga) = ga.as_mut() {
                            ga[i] += da(a[i], b[j]) * g[o];
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[j] += db(a[i], b[j]) * g[o];
                        }
                    });
                }
                vec![ga, gb]
            }) as BackwardFn
        }))
    }

    /// Broadcasting addition.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.additive(other, "add", 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.additive(other, "sub", -1.0)
    }

    fn additive(&self, other: &Tensor, op: &'static str, sign: f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        let out = broadcast_shape(sa, sb).ok_or_else(|| TensorError::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let a = self.data();
        let b = other.data();
        let data: Vec<f64> = if sa == sb {
            a.iter().zip(b.iter()).map(|(&x, &y)| x + sign * y).collect()
        } else {
            let mut d = vec![0.0; super::numel_of(&out)];
            let (ta, tb) = (aligned_strides(sa, &out), aligned_strides(sb, &out));
            for_each_broadcast(&out, &ta, &tb, |o, i, j| d[o] = a[i] + sign * b[j]);
            d
        };
        drop(a);
        drop(b);
        let (sa, sb) = (sa.to_vec(), sb.to_vec());
        let (want_a, want_b) = (self.requires_grad(), other.requires_grad());
        let out_shape = out.clone();
        Ok(Tensor::from_op(data, out, &[self, other], move || {
            Box::new(move |g: &[f64]| {
                let ga = want_a.then(|| reduce_to(g, &out_shape, &sa));
                let gb = want_b.then(|| {
                    let mut r = reduce_to(g, &out_shape, &sb);
                    if sign < 0.0 {
                        r.iter_mut().for_each(|v| *v = -*v);
                    }
                    r
                });
                vec![ga, gb]
            }) as BackwardFn
        }))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |x, y| x * y, |_, y| y, |x, _| x)
    }

    /// Broadcasting division. Any zero in the denominator is an error.
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if let Some(index) = other.data().iter().position(|&v| v == 0.0) {
            return Err(TensorError::DivisionByZero { index });
        }
        self.binary(other, "div", |x, y| x / y, |_, y| 1.0 / y, |x, y| -x / (y * y))
    }

    fn unary<F, D>(&self, f: F, df: D) -> Tensor
    where
        F: Fn(f64) -> f64,
        D: Fn(f64, f64) -> f64 + 'static,
    {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let input = self.clone();
        let keep = super::is_recording() && self.requires_grad();
        let out_data = if keep { data.clone() } else { Vec::new() };
        Tensor::from_op(data, self.shape().to_vec(), &[self], move || {
            Box::new(move |g: &[f64]| {
                let x = input.data();
                let gi = g
                    .iter()
                    .zip(x.iter().zip(&out_data))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(gi)]
            }) as BackwardFn
        })
    }

    pub fn neg(&self) -> Tensor {
        self.unary(|x| -x, |_, _| -1.0)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(sigmoid_f, |_, y| y * (1.0 - y))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor {
        self.unary(softplus_f, |x, _| sigmoid_f(x))
    }

    pub fn abs(&self) -> Tensor {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn sin(&self) -> Tensor {
        self.unary(f64::sin, |x, _| x.cos())
    }

    pub fn cos(&self) -> Tensor {
        self.unary(f64::cos, |x, _| -x.sin())
    }

    /// Elementwise `max(x, c)`.
    pub fn max_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x.max(c), move |x, _| if x > c { 1.0 } else { 0.0 })
    }

    /// Elementwise `min(x, c)`.
    pub fn min_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x.min(c), move |x, _| if x < c { 1.0 } else { 0.0 })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x * c, move |_, _| c)
    }

    /// Elementwise Huber-type penalty: `a²` for `|a| < δ`, else `δ(2|a| − δ)`.
    pub fn huber(&self, delta: f64) -> Result<Tensor> {
        if delta.is_nan() || delta <= 0.0 {
            return Err(TensorError::InvalidArgument {
                op: "huber",
                msg: format!("delta must be positive, got {delta}"),
            });
        }
        Ok(self.unary(
            move |a| {
                if a.abs() < delta {
                    a * a
                } else {
                    delta * (2.0 * a.abs() - delta)
                }
            },
            move |a, _| {
                if a.abs() < delta {
                    2.0 * a
                } else {
                    2.0 * delta * a.signum()
                }
            },
        ))
    }
}
