use super::{NovasConfig, ShapeFunction};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Normalized sample weights from fitness values `[batch × M]` (larger is
/// better). Rows whose values carry no ranking information get uniform
/// weights.
pub fn shape_weights(values: &Tensor, cfg: &NovasConfig) -> Result<Tensor> {
    if values.rank() != 2 {
        return Err(Error::ObjectiveShape {
            got: values.shape().to_vec(),
            want: vec![values.shape().first().copied().unwrap_or(0), cfg.samples],
        });
    }
    if values.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }
    let (rows, m) = (values.shape()[0], values.shape()[1]);
    let y = if cfg.normalize {
        let lo = values.min_axis(1, true)?;
        let hi = values.max_axis(1, true)?;
        let flat = flat_rows(&hi.sub(&lo)?);
        let range = hi.sub(&lo)?.add(&flat)?;
        values.sub(&lo)?.div(&range)?
    } else {
        values.clone()
    };
    match cfg.shape {
        ShapeFunction::Exp => Ok(y.mul_scalar(cfg.kappa).softmax(1)?),
        ShapeFunction::Sigmoid => {
            let gamma = y.pick_last(&elite_indices(&y, cfg.n_elite()))?.unsqueeze(1)?;
            let lo = y.min_axis(1, true)?;
            let s = y.sub(&lo)?.mul(&y.sub(&gamma)?.mul_scalar(cfg.kappa).sigmoid())?;
            let total = s.sum_axis(1, true)?;
            let empty = flat_rows(&total);
            let w = s.div(&total.add(&empty)?)?;
            // rows with no positive weight fall back to uniform
            let fallback = empty.mul_scalar(1.0 / m as f64).expand(&[rows, m])?;
            Ok(w.add(&fallback)?)
        }
    }
}

/// Constant `[rows × 1]` indicator of rows equal to zero.
fn flat_rows(t: &Tensor) -> Tensor {
    let mask = t.data().iter().map(|&v| if v == 0.0 { 1.0 } else { 0.0 }).collect();
    Tensor::new(mask, t.shape()).expect("same shape")
}

/// Per row, the column holding the `n`-th largest value (ties by column).
fn elite_indices(y: &Tensor, n: usize) -> Vec<usize> {
    let m = y.shape()[1];
    let data = y.data();
    data.chunks(m)
        .map(|row| {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            order[n - 1]
        })
        .collect()
}
