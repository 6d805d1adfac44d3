use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbsde::problem::lead_shape;
use crate::fbsde::{SocProblem, Terminal};
use crate::rng::StreamKey;
use crate::tensor::Tensor;

/// Settings from which a [`Market`] is generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketConfig {
    pub n_stocks: usize,
    pub n_traded: usize,
    pub rate: f64,
    pub drift_range: [f64; 2],
    pub vol_range: [f64; 2],
    pub factors: usize,
    pub initial_price: f64,
    pub initial_wealth: f64,
    pub q: f64,
    pub beta: f64,
    pub horizon: f64,
    pub steps: usize,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            n_stocks: 10,
            n_traded: 4,
            rate: 0.01,
            drift_range: [-0.05, 0.10],
            vol_range: [0.10, 0.40],
            factors: 3,
            initial_price: 1.0,
            initial_wealth: 1.0,
            q: 500.0,
            beta: 10.0,
            horizon: 1.0,
            steps: 52,
        }
    }
}

/// A concrete market: everything needed to simulate prices and wealth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Market {
    pub rate: f64,
    /// Annualized drift per stock.
    pub drift: Vec<f64>,
    /// Row `i` holds the loadings of stock `i` on the independent noises.
    pub vol: Vec<Vec<f64>>,
    /// Stock indices available for investment, distinct.
    pub traded: Vec<usize>,
    pub initial_prices: Vec<f64>,
    pub initial_wealth: f64,
    pub q: f64,
    pub beta: f64,
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Market {
    pub fn generate(cfg: &MarketConfig, seed: u64) -> Result<Market> {
        if cfg.n_traded == 0 || cfg.n_traded >= cfg.n_stocks {
            return Err(Error::Config(format!(
                "market: need 0 < n_traded < n_stocks, got {} of {}",
                cfg.n_traded, cfg.n_stocks
            )));
        }
        let key = StreamKey::new(seed).domain("market");
        let mut rng = key.domain("drift").rng();
        let [lo, hi] = cfg.drift_range;
        let drift = (0..cfg.n_stocks).map(|_| rng.random_range(lo..=hi)).collect();
        let vol = synth_covariance(cfg.n_stocks, key.domain("vol"), cfg.vol_range, cfg.factors)?;
        let mut traded = rand::seq::index::sample(&mut key.domain("traded").rng(), cfg.n_stocks, cfg.n_traded)
            .into_vec();
        traded.sort_unstable();
        let market = Market {
            rate: cfg.rate,
            drift,
            vol,
            traded,
            initial_prices: vec![cfg.initial_price; cfg.n_stocks],
            initial_wealth: cfg.initial_wealth,
            q: cfg.q,
            beta: cfg.beta,
            horizon: cfg.horizon,
            steps: cfg.steps,
            seed,
        };
        market.validate()?;
        Ok(market)
    }

    pub fn n_stocks(&self) -> usize {
        self.drift.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_stocks();
        let bad = |m: String| Err(Error::Config(format!("market: {m}")));
        if self.vol.len() != n || self.vol.iter().any(|r| r.len() != n) {
            return bad(format!("vol must be {n}×{n}"));
        }
        if self.initial_prices.len() != n {
            return bad("one initial price per stock".into());
        }
        let mut seen = vec![false; n];
        for &t in &self.traded {
            if t >= n || seen[t] {
                return bad(format!("traded index {t} out of range or repeated"));
            }
            seen[t] = true;
        }
        if self.traded.is_empty() || self.traded.len() >= n {
            return bad("need 0 < traded < stocks".into());
        }
        if self.initial_prices.iter().any(|&p| !(p > 0.0)) || !(self.initial_wealth > 0.0) {
            return bad("initial prices and wealth must be positive".into());
        }
        if !(self.beta > 0.0) || !(self.horizon > 0.0) || self.steps == 0 {
            return bad("beta, horizon and steps must be positive".into());
        }
        Ok(())
    }
}

/// Volatility matrix `σ = D·L`. `L` is the Cholesky factor of a factor-model
/// correlation matrix (unit rows), `D` holds per-stock volatilities drawn
/// from `vol_range`. With no factors the stocks are independent.
pub fn synth_covariance(n: usize, key: StreamKey, vol_range: [f64; 2], factors: usize) -> Result<Vec<Vec<f64>>> {
    let [lo, hi] = vol_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::Config(format!("vol_range must be positive and ordered, got {vol_range:?}")));
    }
    let mut rng = key.rng();
    let vols: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    let mut corr = vec![vec![0.0; n]; n];
    if factors == 0 {
        for (i, row) in corr.iter_mut().enumerate() {
            row[i] = 1.0;
        }
    } else {
        let loadings: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..factors).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let common = rng.random_range(0.3..0.8);
                raw.iter().map(|v| v / norm * common).collect()
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                corr[i][j] = loadings[i].iter().zip(&loadings[j]).map(|(a, b)| a * b).sum();
            }
            corr[i][i] = 1.0;
        }
    }
    let chol = cholesky(&corr)?;
    Ok(chol
        .into_iter()
        .zip(&vols)
        .map(|(row, v)| row.into_iter().map(|c| c * v).collect())
        .collect())
}

fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 {
                    return Err(Error::Config("correlation matrix is not positive definite".into()));
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Index-tracking portfolio problem. State `[S_1..S_N, W]`; control
/// `u ∈ ℝ^{M+1}` mapped to allocations `π = softmax(u)`, with `π_1` in the
/// risk-free asset and the rest in the traded stocks.
pub struct Portfolio {
    market: Market,
    drift: Tensor,
    traded_drift: Tensor,
    vol: Tensor,
    traded_vol: Tensor,
    /// `σ_t σᵀ`, `[M × N]`
    cross_cov: Tensor,
    /// `σ_t σ_tᵀ`, `[M × M]`
    traded_cov: Tensor,
}

impl Portfolio {
    pub fn new(market: Market) -> Result<Self> {
        market.validate()?;
        let n = market.n_stocks();
        let m = market.traded.len();
        let flat: Vec<f64> = market.vol.iter().flatten().copied().collect();
        let vol = Tensor::new(flat, &[n, n])?;
        let traded_vol = vol.gather(0, &market.traded)?;
        let cross_cov = traded_vol.matmul(&vol.transpose()?)?;
        let traded_cov = traded_vol.matmul(&traded_vol.transpose()?)?;
        let traded_drift = Tensor::vector(market.traded.iter().map(|&i| market.drift[i]).collect());
        debug_assert_eq!(traded_drift.numel(), m);
        Ok(Portfolio {
            drift: Tensor::vector(market.drift.clone()),
            traded_drift,
            vol,
            traded_vol,
            cross_cov,
            traded_cov,
            market,
        })
    }

    pub fn market(&self) -> &Market {
        &self.market
    }

    fn n(&self) -> usize {
        self.market.n_stocks()
    }

    fn m(&self) -> usize {
        self.market.traded.len()
    }

    fn split(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let axis = x.rank() - 1;
        Ok((x.slice(axis, 0, self.n())?, x.slice(axis, self.n(), 1)?))
    }

    /// `(π_1, π_traded)` for controls `[.., M+1]`.
    fn allocation(&self, u: &Tensor) -> Result<(Tensor, Tensor)> {
        let axis = u.rank() - 1;
        let pi = u.softmax(axis)?;
        Ok((pi.slice(axis, 0, 1)?, pi.slice(axis, 1, self.m())?))
    }

    /// Row-wise `a · B` for `a: [.., k]`, `B: [k × j]`.
    fn rows_times(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let lead = &a.shape()[..a.rank() - 1];
        let rows: usize = lead.iter().product();
        let k = a.shape()[a.rank() - 1];
        let out = a.reshape(&[rows, k])?.matmul(b)?;
        let mut shape = lead.to_vec();
        shape.push(b.shape()[1]);
        Ok(out.reshape(&shape)?)
    }

    /// Equally weighted index `I = mean(S)`, `[..]`.
    pub fn index(&self, x: &Tensor) -> Result<Tensor> {
        let (s, _) = self.split(x)?;
        Ok(s.mean_axis(s.rank() - 1, false)?)
    }
}

impl SocProblem for Portfolio {
    fn state_dim(&self) -> usize {
        self.n() + 1
    }

    fn control_dim(&self) -> usize {
        self.m() + 1
    }

    fn noise_dim(&self) -> usize {
        self.n()
    }

    fn horizon(&self) -> f64 {
        self.market.horizon
    }

    fn steps(&self) -> usize {
        self.market.steps
    }

    fn initial_state(&self, batch: usize) -> Tensor {
        let mut row = self.market.initial_prices.clone();
        row.push(self.market.initial_wealth);
        let data = row.iter().copied().cycle().take(batch * row.len()).collect();
        Tensor::new(data, &[batch, row.len()]).expect("row length")
    }

    fn drift(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        let lead = lead_shape(x, u)?;
        let (s, w) = self.split(x)?;
        let (cash, stocks) = self.allocation(u)?;
        let axis = u.rank() - 1;
        let rate = cash
            .mul_scalar(self.market.rate)
            .add(&stocks.mul(&self.traded_drift)?.sum_axis(axis, true)?)?;
        let mut shape = lead.clone();
        shape.push(self.n());
        let ds = s.mul(&self.drift)?.expand(&shape)?;
        *shape.last_mut().unwrap() = 1;
        let dw = w.mul(&rate)?.expand(&shape)?;
        Ok(Tensor::concat(&[&ds, &dw], shape.len() - 1)?)
    }

    fn diffusion(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        let (s, w) = self.split(x)?;
        let (_, stocks) = self.allocation(u)?;
        let stock_rows = s.unsqueeze(2)?.mul(&self.vol)?;
        let wealth_row = w.mul(&stocks.matmul(&self.traded_vol)?)?.unsqueeze(1)?;
        Ok(Tensor::concat(&[&stock_rows, &wealth_row], 1)?)
    }

    fn diffuse(&self, x: &Tensor, u: &Tensor, dw: &Tensor) -> Result<Tensor> {
        let (s, w) = self.split(x)?;
        let (_, stocks) = self.allocation(u)?;
        let eta = dw.linear(&self.vol, None)?;
        let ds = s.mul(&eta)?;
        let dwealth = w.mul(&stocks.mul(&eta.gather(1, &self.market.traded)?)?.sum_axis(1, true)?)?;
        Ok(Tensor::concat(&[&ds, &dwealth], 1)?)
    }

    fn running_cost(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        Ok(Tensor::zeros(&lead_shape(x, u)?))
    }

    fn terminal(&self, x: &Tensor) -> Result<Terminal> {
        let (q, beta, n) = (self.market.q, self.market.beta, self.n() as f64);
        let (s, w) = self.split(x)?;
        let z = s.mean_axis(1, true)?.sub(&w)?;
        let sp = z.mul_scalar(beta).softplus().mul_scalar(1.0 / beta);
        let sg = z.mul_scalar(beta).sigmoid();
        let value = sp.square().mul_scalar(q).reshape(&[x.shape()[0]])?;
        let dz = sp.mul(&sg)?.mul_scalar(2.0 * q);
        let curvature = sp.mul(&sg)?.mul(&sg.neg().add_scalar(1.0))?.mul_scalar(beta);
        let dzz = sg.square().add(&curvature)?.mul_scalar(2.0 * q);
        let b = x.shape()[0];
        let grad = Tensor::concat(&[&dz.mul_scalar(1.0 / n).expand(&[b, self.n()])?, &dz.neg()], 1)?;
        let hess = Tensor::concat(&[&dzz.mul_scalar(-1.0 / n).expand(&[b, self.n()])?, &dzz], 1)?;
        Ok(Terminal {
            value,
            grad,
            hess_col: Some(hess),
        })
    }

    fn hessian_column(&self) -> Option<usize> {
        Some(self.n())
    }

    /// Only the wealth row of Σ depends on `u`, so with `c` the wealth column
    /// of `V_xx` the control-dependent part of `½ tr(V_xx ΣΣᵀ)` is
    /// `Σ_i c_i (Σ_i · Σ_W) + ½ c_W |Σ_W|²` over stocks `i`.
    fn trace_term(&self, x: &Tensor, u: &Tensor, hess_col: &Tensor) -> Result<Option<Tensor>> {
        let (s, w) = self.split(x)?;
        let (cs, cw) = self.split(hess_col)?;
        let (_, stocks) = self.allocation(u)?;
        let axis = u.rank() - 1;
        let cross = Self::rows_times(&stocks, &self.cross_cov)?.mul(&s)?.mul(&w)?;
        let cross = cross.mul(&cs)?.sum_axis(axis, false)?;
        let own = Self::rows_times(&stocks, &self.traded_cov)?.mul(&stocks)?.sum_axis(axis, true)?;
        let own = own.mul(&w.square())?.mul(&cw)?.mul_scalar(0.5).sum_axis(axis, false)?;
        Ok(Some(cross.add(&own)?))
    }

    fn check_state(&self, x: &Tensor, step: usize) -> Result<()> {
        if !x.all_finite() {
            return Err(Error::NonFinite { what: "state", step });
        }
        if let Some(v) = x.data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Absorbing(format!("nonpositive price or wealth {v} after step {step}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// `u = 0`, i.e. equal allocation over cash and traded stocks.
    Equal,
    /// Fresh `u ~ N(0, I)` every step.
    Random,
}

/// Baseline control `[batch × dim]` for `step`; random controls for row `r`
/// come from `key.child(step).child(r)`.
pub fn baseline_control(kind: Baseline, batch: usize, dim: usize, key: StreamKey, step: usize) -> Tensor {
    let data = match kind {
        Baseline::Equal => vec![0.0; batch * dim],
        Baseline::Random => key.child(step as u64).normal_rows(batch, dim),
    };
    Tensor::new(data, &[batch, dim]).expect("sized")
}
