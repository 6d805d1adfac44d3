use super::shape::split_axis;
use super::{BackwardFn, Result, Tensor, TensorError};

impl Tensor {
    fn check_axis(&self, op: &'static str, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(TensorError::InvalidAxis {
                op,
                axis,
                shape: self.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![s], Vec::new(), &[self], move || {
            Box::new(move |g: &[f64]| vec![Some(vec![g[0]; n])]) as BackwardFn
        })
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel().max(1);
        self.sum_all().mul_scalar(1.0 / n as f64)
    }

    /// Sum over `axis`; the axis is removed unless `keepdim`.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.check_axis("sum_axis", axis)?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let src = self.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        drop(src);
        let shape = reduced_shape(self.shape(), axis, keepdim);
        Ok(Tensor::from_op(data, shape, &[self], move || {
            Box::new(move |g: &[f64]| {
                let mut gi = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        let base = (o * n + k) * inner;
                        gi[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gi)]
            }) as BackwardFn
        }))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.check_axis("mean_axis", axis)?;
        let n = self.shape()[axis].max(1);
        Ok(self.sum_axis(axis, keepdim)?.mul_scalar(1.0 / n as f64))
    }

    fn extreme_axis(
        &self,
        op: &'static str,
        axis: usize,
        keepdim: bool,
        better: fn(f64, f64) -> bool,
    ) -> Result<Tensor> {
        self.check_axis(op, axis)?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        if n == 0 {
            return Err(TensorError::InvalidArgument {
                op,
                msg: "empty axis".into(),
            });
        }
        let src = self.data();
        let mut data = vec![0.0; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = src[o * n * inner + i];
                let mut best_k = 0;
                for k in 1..n {
                    let v = src[(o * n + k) * inner + i];
                    if better(v, best) {
                        best = v;
                        best_k = k;
                    }
                }
                data[o * inner + i] = best;
                arg[o * inner + i] = best_k;
            }
        }
        drop(src);
        let shape = reduced_shape(self.shape(), axis, keepdim);
        Ok(Tensor::from_op(data, shape, &[self], move || {
            Box::new(move |g: &[f64]| {
                let mut gi = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let k = arg[o * inner + i];
                        gi[(o * n + k) * inner + i] = g[o * inner + i];
                    }
                }
                vec![Some(gi)]
            }) as BackwardFn
        }))
    }

    /// Maximum over `axis`. The gradient goes to the first maximal entry.
    pub fn max_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.extreme_axis("max_axis", axis, keepdim, |v, best| v > best)
    }

    /// Minimum over `axis`. The gradient goes to the first minimal entry.
    pub fn min_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.extreme_axis("min_axis", axis, keepdim, |v, best| v < best)
    }

    /// Softmax along `axis`, stabilized by subtracting the axis maximum.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        self.check_axis("softmax", axis)?;
        if self.data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::NaN { op: "softmax" });
        }
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let src = self.data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..n {
                    let e = (src[at(k)] - m).exp();
                    data[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    data[at(k)] /= z;
                }
            }
        }
        drop(src);
        let keep = super::is_recording() && self.requires_grad();
        let y = if keep { data.clone() } else { Vec::new() };
        Ok(Tensor::from_op(data, self.shape().to_vec(), &[self], move || {
            Box::new(move |g: &[f64]| {
                let mut gi = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let dot: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..n {
                            gi[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                vec![Some(gi)]
            }) as BackwardFn
        }))
    }
}

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim {
        s[axis] = 1;
    } else {
        s.remove(axis);
    }
    s
}
