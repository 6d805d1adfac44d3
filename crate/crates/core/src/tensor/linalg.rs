use super::{BackwardFn, Result, Tensor, TensorError};

/// Strided view of a row-major matrix, possibly transposed.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    row_stride: isize,
    col_stride: isize,
}

impl<'a> View<'a> {
    fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        View {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    fn t(self) -> Self {
        View {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `out (+)= a · b` for row-major `out`.
fn gemm(a: View<'_>, b: View<'_>, out: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(out.len(), a.rows * b.cols);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the views describe in-bounds strided matrices of the given
    // extents and `out` holds exactly m*n row-major elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn mat_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::InvalidArgument {
            op,
            msg: format!("expected a matrix, got shape {s:?}"),
        }),
    }
}

impl Tensor {
    /// Matrix product `[m × k] · [k × n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = mat_dims("matmul", self)?;
        let (k2, n) = mat_dims("matmul", other)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let mut data = vec![0.0; m * n];
        gemm(
            View::new(&self.data(), m, k),
            View::new(&other.data(), k, n),
            &mut data,
            false,
        );
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(data, vec![m, n], &[self, other], move || {
            Box::new(move |g: &[f64]| {
                let gv = View::new(g, m, n);
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![0.0; m * k];
                    gemm(gv, View::new(&b.data(), k, n).t(), &mut ga, false);
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![0.0; k * n];
                    gemm(View::new(&a.data(), m, k).t(), gv, &mut gb, false);
                    gb
                });
                vec![ga, gb]
            }) as BackwardFn
        }))
    }

    /// Affine map `x · Wᵀ + b` with `x: [r × in]`, `W: [out × in]`, `b: [out]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (r, i) = mat_dims("linear", self)?;
        let (o, i2) = mat_dims("linear", weight)?;
        if i != i2 {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [o] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear(bias)",
                    lhs: weight.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let mut data = vec![0.0; r * o];
        if let Some(b) = bias {
            let bd = b.data();
            for row in data.chunks_mut(o) {
                row.copy_from_slice(&bd);
            }
        }
        gemm(
            View::new(&self.data(), r, i),
            View::new(&weight.data(), o, i).t(),
            &mut data,
            bias.is_some(),
        );
        let (x, w) = (self.clone(), weight.clone());
        let bias_grad = bias.map(|b| b.requires_grad()).unwrap_or(false);
        let mut inputs = vec![self, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        let n_inputs = inputs.len();
        Ok(Tensor::from_op(data, vec![r, o], &inputs, move || {
            Box::new(move |g: &[f64]| {
                let gv = View::new(g, r, o);
                let gx = x.requires_grad().then(|| {
                    let mut gx = vec![0.0; r * i];
                    gemm(gv, View::new(&w.data(), o, i), &mut gx, false);
                    gx
                });
                let gw = w.requires_grad().then(|| {
                    let mut gw = vec![0.0; o * i];
                    gemm(gv.t(), View::new(&x.data(), r, i), &mut gw, false);
                    gw
                });
                let mut out = vec![gx, gw];
                if n_inputs == 3 {
                    out.push(bias_grad.then(|| {
                        let mut gb = vec![0.0; o];
                        for row in g.chunks(o) {
                            gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                        }
                        gb
                    }));
                }
                out
            }) as BackwardFn
        }))
    }

    /// Batched matrix–vector product `[B × m × n] · [B × n] → [B × m]`.
    pub fn batched_matvec(&self, v: &Tensor) -> Result<Tensor> {
        let (bsz, m, n) = match self.shape() {
            [b, m, n] => (*b, *m, *n),
            s => {
                return Err(TensorError::InvalidArgument {
                    op: "batched_matvec",
                    msg: format!("expected a rank-3 tensor, got shape {s:?}"),
                })
            }
        };
        if v.shape() != [bsz, n] {
            return Err(TensorError::ShapeMismatch {
                op: "batched_matvec",
                lhs: self.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let (ad, vd) = (self.data(), v.data());
        let mut data = vec![0.0; bsz * m];
        for b in 0..bsz {
            let vb = &vd[b * n..(b + 1) * n];
            for r in 0..m {
                let row = &ad[(b * m + r) * n..(b * m + r + 1) * n];
                data[b * m + r] = row.iter().zip(vb).map(|(x, y)| x * y).sum();
            }
        }
        drop(ad);
        drop(vd);
        let (a, x) = (self.clone(), v.clone());
        Ok(Tensor::from_op(data, vec![bsz, m], &[self, v], move || {
            Box::new(move |g: &[f64]| {
                let (ad, vd) = (a.data(), x.data());
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![0.0; bsz * m * n];
                    for b in 0..bsz {
                        for r in 0..m {
                            let gr = g[b * m + r];
                            for c in 0..n {
                                ga[(b * m + r) * n + c] = gr * vd[b * n + c];
                            }
                        }
                    }
                    ga
                });
                let gv = x.requires_grad().then(|| {
                    let mut gv = vec![0.0; bsz * n];
                    for b in 0..bsz {
                        for r in 0..m {
                            let gr = g[b * m + r];
                            for c in 0..n {
                                gv[b * n + c] += gr * ad[(b * m + r) * n + c];
                            }
                        }
                    }
                    gv
                });
                vec![ga, gv]
            }) as BackwardFn
        }))
    }
}
