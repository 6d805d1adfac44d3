use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbsde::problem::{col, lead_shape, stack_cols};
use crate::fbsde::{SocProblem, Terminal};
use crate::tensor::Tensor;

/// Cart-pole swing-up. State `[x, θ, ẋ, θ̇]` with `θ = 0` hanging down;
/// scalar horizontal force as control; noise on the two velocity channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPole {
    pub pole_mass: f64,
    pub cart_mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub noise: f64,
    pub q: [f64; 4],
    pub r: f64,
    pub target: [f64; 4],
    pub horizon: f64,
    pub steps: usize,
}

impl Default for CartPole {
    fn default() -> Self {
        CartPole {
            pole_mass: 0.01,
            cart_mass: 1.0,
            length: 0.5,
            gravity: 9.81,
            noise: 0.5,
            q: [0.0, 10.0, 3.0, 0.5],
            r: 0.1,
            target: [0.0, PI, 0.0, 0.0],
            horizon: 1.5,
            steps: 75,
        }
    }
}

impl CartPole {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.pole_mass, self.cart_mass, self.length, self.gravity];
        if positive.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("cartpole: masses, length and gravity must be positive".into()));
        }
        if self.pole_mass >= self.cart_mass {
            return Err(Error::Config("cartpole: pole mass must stay below cart mass".into()));
        }
        if !(self.r > 0.0) {
            return Err(Error::Config("cartpole: control cost r must be positive".into()));
        }
        if self.noise < 0.0 || self.q.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("cartpole: noise and q must be nonnegative".into()));
        }
        if !(self.horizon > 0.0) || self.steps == 0 {
            return Err(Error::Config("cartpole: need a positive horizon and steps".into()));
        }
        Ok(())
    }

    /// `m_c + m_p sin θ` for `θ: [.., 1]`.
    fn denominator(&self, theta: &Tensor) -> Tensor {
        theta.sin().mul_scalar(self.pole_mass).add_scalar(self.cart_mass)
    }

    /// Control gain `G(x)`, the coefficient of `u` in the drift, `[.., 4]`.
    pub fn control_gain(&self, x: &Tensor) -> Result<Tensor> {
        let theta = col(x, 1)?;
        let d = self.denominator(&theta);
        let zero = Tensor::zeros(theta.shape());
        let gx = Tensor::ones(theta.shape()).div(&d)?;
        let gt = theta.cos().neg().div(&d.mul_scalar(self.length))?;
        let lead = &x.shape()[..x.rank() - 1];
        stack_cols(&[zero.clone(), zero, gx, gt], lead)
    }

    /// Stationary point of `V_xᵀ(F + G u) + uᵀRu`: `u* = −½ R⁻¹ Gᵀ V_x`.
    pub fn closed_form_u(&self, x: &Tensor, vx: &Tensor) -> Result<Tensor> {
        if !(self.r > 0.0) {
            return Err(Error::Config("cartpole: control cost r must be positive".into()));
        }
        let gv = self.control_gain(x)?.mul(vx)?.sum_axis(x.rank() - 1, true)?;
        Ok(gv.mul_scalar(-0.5 / self.r))
    }

    /// `(x − x*)ᵀ Q (x − x*)` over the last axis.
    fn state_cost(&self, x: &Tensor) -> Result<Tensor> {
        let e = x.sub(&Tensor::vector(self.target.to_vec()))?;
        Ok(e.square().mul(&Tensor::vector(self.q.to_vec()))?.sum_axis(x.rank() - 1, false)?)
    }

    /// Mechanical energy of the cart and pendulum, `[..]`.
    pub fn energy(&self, x: &Tensor) -> Result<Tensor> {
        let (mp, mc, l, g) = (self.pole_mass, self.cart_mass, self.length, self.gravity);
        let theta = col(x, 1)?;
        let xd = col(x, 2)?;
        let td = col(x, 3)?;
        let kin_cart = xd.square().mul_scalar(0.5 * (mc + mp));
        let coupling = xd.mul(&td)?.mul(&theta.cos())?.mul_scalar(mp * l);
        let kin_pole = td.square().mul_scalar(0.5 * mp * l * l);
        let pot = theta.cos().mul_scalar(-mp * g * l);
        let e = kin_cart.add(&coupling)?.add(&kin_pole)?.add(&pot)?;
        Ok(e.sum_axis(x.rank() - 1, false)?)
    }
}

impl SocProblem for CartPole {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn initial_state(&self, batch: usize) -> Tensor {
        Tensor::zeros(&[batch, 4])
    }

    fn drift(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        let (mp, l, g) = (self.pole_mass, self.length, self.gravity);
        let lead = lead_shape(x, u)?;
        let theta = col(x, 1)?;
        let xd = col(x, 2)?;
        let td = col(x, 3)?;
        let (s, c) = (theta.sin(), theta.cos());
        let d = self.denominator(&theta);
        // ẍ = (u + m_p sinθ (l θ̇ + g cosθ)) / d
        let push = s.mul(&td.mul_scalar(l).add(&c.mul_scalar(g))?)?.mul_scalar(mp);
        let xdd = u.add(&push)?.div(&d)?;
        // θ̈ = (−u cosθ − m_p l θ̇ cosθ sinθ) / (l d)
        let swing = td.mul(&c)?.mul(&s)?.mul_scalar(mp * l);
        let tdd = u.mul(&c)?.add(&swing)?.neg().div(&d.mul_scalar(l))?;
        stack_cols(&[xd, td, xdd, tdd], &lead)
    }

    fn diffusion(&self, x: &Tensor, _u: &Tensor) -> Result<Tensor> {
        let b = x.shape()[0];
        let mut data = vec![0.0; b * 8];
        for row in data.chunks_mut(8) {
            row[4] = self.noise;
            row[7] = self.noise;
        }
        Ok(Tensor::new(data, &[b, 4, 2])?)
    }

    fn diffuse(&self, x: &Tensor, _u: &Tensor, dw: &Tensor) -> Result<Tensor> {
        let zeros = Tensor::zeros(&[x.shape()[0], 2]);
        Ok(Tensor::concat(&[&zeros, &dw.mul_scalar(self.noise)], 1)?)
    }

    fn running_cost(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        let effort = u.square().sum_axis(u.rank() - 1, false)?.mul_scalar(self.r);
        Ok(self.state_cost(x)?.add(&effort)?)
    }

    fn terminal(&self, x: &Tensor) -> Result<Terminal> {
        let e = x.sub(&Tensor::vector(self.target.to_vec()))?;
        let q2 = Tensor::vector(self.q.iter().map(|v| 2.0 * v).collect());
        Ok(Terminal {
            value: self.state_cost(x)?,
            grad: e.mul(&q2)?,
            hess_col: None,
        })
    }
}
