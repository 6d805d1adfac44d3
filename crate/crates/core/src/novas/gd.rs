use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Objective with an explicit, tape-recorded gradient in its input.
pub trait DifferentiableObjective {
    /// For `y: [batch × dim]`, values `[batch]` and `∂value/∂y: [batch × dim]`.
    fn value_and_gradient(&self, y: &Tensor) -> Result<(Tensor, Tensor)>;
}

/// `steps` gradient-descent updates `y ← y − lr·∇f(y)`, all on the tape so
/// an outer loss can differentiate through them.
pub fn unrolled_gd<O: DifferentiableObjective + ?Sized>(
    obj: &O,
    y0: &Tensor,
    steps: usize,
    lr: f64,
) -> Result<Tensor> {
    let mut y = y0.clone();
    for step in 0..steps {
        let (_, g) = obj.value_and_gradient(&y)?;
        if !g.all_finite() {
            return Err(Error::NonFinite {
                what: "inner gradient",
                step,
            });
        }
        y = y.sub(&g.mul_scalar(lr))?;
    }
    Ok(y)
}
