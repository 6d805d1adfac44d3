use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Terminal cost with its state gradient and one designated Hessian column.
#[derive(Clone, Debug)]
pub struct Terminal {
    /// `[batch]`
    pub value: Tensor,
    /// `[batch × n]`
    pub grad: Tensor,
    /// `[batch × n]`, column [`SocProblem::hessian_column`] of `φ_xx`.
    pub hess_col: Option<Tensor>,
}

/// A finite-horizon stochastic optimal control problem
/// `dx = f(x,u)dt + Σ(x,u)dw`, cost `∫ l(x,u)dt + φ(x_T)`.
///
/// State-like arguments carry the state on their last axis and may have any
/// leading axes that broadcast against those of the control.
pub trait SocProblem {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn steps(&self) -> usize;

    fn dt(&self) -> f64 {
        self.horizon() / self.steps() as f64
    }

    /// `[batch × n]`
    fn initial_state(&self, batch: usize) -> Tensor;

    /// `f(x, u)` with shape `[.., n]`.
    fn drift(&self, x: &Tensor, u: &Tensor) -> Result<Tensor>;

    /// `Σ(x, u)` for `x: [batch × n]`, `u: [batch × m]`, shape `[batch × n × v]`.
    fn diffusion(&self, x: &Tensor, u: &Tensor) -> Result<Tensor>;

    /// `Σ(x, u) dw` with `dw: [batch × v]`.
    fn diffuse(&self, x: &Tensor, u: &Tensor, dw: &Tensor) -> Result<Tensor> {
        Ok(self.diffusion(x, u)?.batched_matvec(dw)?)
    }

    /// `l(x, u)` with shape `[..]`.
    fn running_cost(&self, x: &Tensor, u: &Tensor) -> Result<Tensor>;

    /// `φ` and its derivatives at `x: [batch × n]`.
    fn terminal(&self, x: &Tensor) -> Result<Terminal>;

    /// State index whose `V_xx` column the value network predicts, if any.
    fn hessian_column(&self) -> Option<usize> {
        None
    }

    /// The control-dependent part of `½ tr(V_xx ΣΣᵀ)` given the predicted
    /// Hessian column. `None` when Σ does not depend on the control.
    fn trace_term(&self, _x: &Tensor, _u: &Tensor, _hess_col: &Tensor) -> Result<Option<Tensor>> {
        Ok(None)
    }

    /// Reject states the dynamics cannot continue from.
    fn check_state(&self, x: &Tensor, step: usize) -> Result<()> {
        if x.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { what: "state", step })
        }
    }
}

/// `½ tr(V_xx ΣΣᵀ) + V_xᵀ f(x,u) + l(x,u)` for every candidate control.
///
/// `x`, `vx` and `hess_col` are `[batch × n]`; `u` is `[batch × M × m]`;
/// the result is `[batch × M]`. The trace enters only when the problem
/// supplies a control-dependent one and a Hessian column is given.
pub fn hamiltonian<P: SocProblem + ?Sized>(
    problem: &P,
    x: &Tensor,
    u: &Tensor,
    vx: &Tensor,
    hess_col: Option<&Tensor>,
) -> Result<Tensor> {
    let n = problem.state_dim();
    let dims_ok = x.rank() == 2
        && x.shape()[1] == n
        && vx.shape() == x.shape()
        && u.rank() == 3
        && u.shape()[0] == x.shape()[0]
        && u.shape()[2] == problem.control_dim()
        && hess_col.is_none_or(|h| h.shape() == x.shape());
    if !dims_ok {
        return Err(Error::Config(format!(
            "hamiltonian: x {:?}, V_x {:?}, u {:?} inconsistent with n={n}, m={}",
            x.shape(),
            vx.shape(),
            u.shape(),
            problem.control_dim()
        )));
    }
    let xe = x.unsqueeze(1)?;
    let f = problem.drift(&xe, u)?;
    let mut h = f
        .mul(&vx.unsqueeze(1)?)?
        .sum_axis(2, false)?
        .add(&problem.running_cost(&xe, u)?)?;
    if let Some(c) = hess_col {
        if let Some(t) = problem.trace_term(&xe, u, &c.unsqueeze(1)?)? {
            h = h.add(&t)?;
        }
    }
    Ok(h)
}

/// Column `j` of the last axis, kept as a length-1 axis.
pub(crate) fn col(t: &Tensor, j: usize) -> Result<Tensor> {
    Ok(t.slice(t.rank() - 1, j, 1)?)
}

/// Leading (non-feature) shape shared by `x` and `u` after broadcasting.
pub(crate) fn lead_shape(x: &Tensor, u: &Tensor) -> Result<Vec<usize>> {
    let a = &x.shape()[..x.rank() - 1];
    let b = &u.shape()[..u.rank() - 1];
    crate::tensor::broadcast_shape(a, b).ok_or_else(|| {
        Error::Config(format!("state {:?} and control {:?} do not broadcast", x.shape(), u.shape()))
    })
}

/// Broadcast each `[.., 1]` column to `lead × 1` and join them on the last axis.
pub(crate) fn stack_cols(cols: &[Tensor], lead: &[usize]) -> Result<Tensor> {
    let mut shape = lead.to_vec();
    shape.push(1);
    let full: Vec<Tensor> = cols.iter().map(|c| c.expand(&shape)).collect::<std::result::Result<_, _>>()?;
    let refs: Vec<&Tensor> = full.iter().collect();
    Ok(Tensor::concat(&refs, shape.len() - 1)?)
}
