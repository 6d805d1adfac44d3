use super::{numel_of, BackwardFn, Result, Tensor, TensorError};

/// Numpy-style broadcast of two shapes, aligned on trailing dimensions.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` laid against `out`, with zero stride on broadcast axes.
pub(crate) fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= shape[i];
    }
    strides
}

/// Visit every output element with the matching input offsets.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = numel_of(out);
    if n == 0 {
        return;
    }
    if out.is_empty() {
        f(0, 0, 0);
        return;
    }
    let rank = out.len();
    let inner = out[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let mut counter = vec![0usize; rank - 1];
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut o = 0;
    while o < n {
        for j in 0..inner {
            f(o + j, ia + j * la, ib + j * lb);
        }
        o += inner;
        // odometer over the leading axes
        let mut d = rank - 1;
        while d > 0 {
            d -= 1;
            counter[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if counter[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            counter[d] = 0;
        }
    }
}

/// Sum a gradient of shape `out` down to `shape` (inverse of broadcasting).
pub(crate) fn reduce_to(grad: &[f64], out: &[usize], shape: &[usize]) -> Vec<f64> {
    if out == shape {
        return grad.to_vec();
    }
    let mut acc = vec![0.0; numel_of(shape)];
    let s = aligned_strides(shape, out);
    let zeros = vec![0; out.len()];
    for_each_broadcast(out, &s, &zeros, |o, i, _| acc[i] += grad[o]);
    acc
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(TensorError::InvalidAxis {
            op,
            axis,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

/// (outer, axis length, inner) factorization of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel_of(&shape[..axis]);
    let inner = numel_of(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.to_vec();
        Ok(Tensor::from_op(data, shape.to_vec(), &[self], || {
            Box::new(|g: &[f64]| vec![Some(g.to_vec())]) as BackwardFn
        }))
    }

    /// Insert a unit axis at `axis`.
    pub fn unsqueeze(&self, axis: usize) -> Result<Tensor> {
        if axis > self.rank() {
            return Err(TensorError::InvalidAxis {
                op: "unsqueeze",
                axis,
                shape: self.shape().to_vec(),
            });
        }
        let mut shape = self.shape().to_vec();
        shape.insert(axis, 1);
        self.reshape(&shape)
    }

    /// Materialize a broadcast of `self` to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Result<Tensor> {
        match broadcast_shape(self.shape(), shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "expand",
                    lhs: self.shape().to_vec(),
                    rhs: shape.to_vec(),
                })
            }
        }
        let src = self.data();
        let mut data = vec![0.0; numel_of(shape)];
        let s = aligned_strides(self.shape(), shape);
        let zeros = vec![0; shape.len()];
        for_each_broadcast(shape, &s, &zeros, |o, i, _| data[o] = src[i]);
        drop(src);
        let in_shape = self.shape().to_vec();
        let out_shape = shape.to_vec();
        Ok(Tensor::from_op(data, shape.to_vec(), &[self], move || {
            Box::new(move |g: &[f64]| vec![Some(reduce_to(g, &out_shape, &in_shape))]) as BackwardFn
        }))
    }

    /// Swap the two axes of a matrix.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "transpose",
                msg: format!("expected a matrix, got shape {:?}", self.shape()),
            });
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let data = transpose_raw(&self.data(), r, c);
        Ok(Tensor::from_op(data, vec![c, r], &[self], move || {
            Box::new(move |g: &[f64]| vec![Some(transpose_raw(g, c, r))]) as BackwardFn
        }))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis("slice", self, axis)?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        if start + len > n {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                msg: format!("range {start}..{} exceeds axis length {n}", start + len),
            });
        }
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        drop(src);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(data, shape, &[self], move || {
            Box::new(move |g: &[f64]| {
                let mut gi = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let base = o * n * inner + start * inner;
                    gi[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gi)]
            }) as BackwardFn
        }))
    }

    /// Select entries along `axis` by index (repeats allowed).
    pub fn gather(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        check_axis("gather", self, axis)?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TensorError::InvalidArgument {
                op: "gather",
                msg: format!("index {bad} out of range for axis length {n}"),
            });
        }
        let k = indices.len();
        let src = self.data();
        let mut data = Vec::with_capacity(outer * k * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * n + i) * inner;
                data.extend_from_slice(&src[base..base + inner]);
            }
        }
        drop(src);
        let mut shape = self.shape().to_vec();
        shape[axis] = k;
        let idx = indices.to_vec();
        Ok(Tensor::from_op(data, shape, &[self], move || {
            Box::new(move |g: &[f64]| {
                let mut gi = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for (j, &i) in idx.iter().enumerate() {
                        let dst = (o * n + i) * inner;
                        let src = (o * k + j) * inner;
                        for t in 0..inner {
                            gi[dst + t] += g[src + t];
                        }
                    }
                }
                vec![Some(gi)]
            }) as BackwardFn
        }))
    }

    /// For a tensor of shape `[.., n]`, pick one entry per row of the last
    /// axis. Output drops the last axis.
    pub fn pick_last(&self, indices: &[usize]) -> Result<Tensor> {
        if self.rank() == 0 {
            return Err(TensorError::InvalidArgument {
                op: "pick_last",
                msg: "scalar input".into(),
            });
        }
        let n = *self.shape().last().unwrap();
        let rows = self.numel() / n.max(1);
        if indices.len() != rows || indices.iter().any(|&i| i >= n) {
            return Err(TensorError::InvalidArgument {
                op: "pick_last",
                msg: format!("need {rows} indices below {n}"),
            });
        }
        let src = self.data();
        let data: Vec<f64> = indices.iter().enumerate().map(|(r, &i)| src[r * n + i]).collect();
        drop(src);
        let shape = self.shape()[..self.rank() - 1].to_vec();
        let idx = indices.to_vec();
        Ok(Tensor::from_op(data, shape, &[self], move || {
            Box::new(move |g: &[f64]| {
                let mut gi = vec![0.0; rows * n];
                for (r, &i) in idx.iter().enumerate() {
                    gi[r * n + i] = g[r];
                }
                vec![Some(gi)]
            }) as BackwardFn
        }))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        check_axis("concat", first, axis)?;
        for p in &parts[1..] {
            let same_rank = p.rank() == first.rank();
            let agree = same_rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !agree {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        {
            let views: Vec<_> = parts.iter().map(|p| p.data()).collect();
            for o in 0..outer {
                for (v, &w) in views.iter().zip(&widths) {
                    data.extend_from_slice(&v[o * w..(o + 1) * w]);
                }
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total / inner.max(1);
        if inner == 0 {
            shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        }
        Ok(Tensor::from_op(data, shape, parts, move || {
            Box::new(move |g: &[f64]| {
                let mut grads: Vec<Vec<f64>> =
                    widths.iter().map(|w| Vec::with_capacity(w * outer)).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (gi, &w) in grads.iter_mut().zip(&widths) {
                        gi.extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                grads.into_iter().map(Some).collect()
            }) as BackwardFn
        }))
    }
}

pub(crate) fn transpose_raw(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}
