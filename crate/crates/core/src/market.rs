//! Deterministic-coefficient multi-asset Black-Scholes market.
//!
//! Coefficients are constant on `n_cells` equal cells of `[0, T]`, so every
//! time integral the closed forms need is an exact prefix sum.

use crate::error::{PsaharaError, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const DEFAULT_STEPS_PER_YEAR: f64 = 252.0;

/// `int_t^T r` and `int_t^T |theta|^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelIntegrals {
    pub rate: f64,
    pub theta_sq: f64,
}

#[derive(Clone, Debug)]
pub struct MarketModel {
    horizon: f64,
    steps_per_year: f64,
    relaxed: bool,
    dt: f64,
    r: Vec<f64>,
    mu: Vec<DVector<f64>>,
    sigma: Vec<DMatrix<f64>>,
    theta: Vec<DVector<f64>>,
    premium: Vec<DVector<f64>>,
    cum_r: Vec<f64>,
    cum_theta_sq: Vec<f64>,
}

/// Pricing-kernel realisation at a time point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelState {
    pub t: f64,
    pub xi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_xi_path: Option<Vec<f64>>,
}

impl MarketModel {
    /// Builds a market from per-cell data; length-1 inputs are broadcast.
    pub fn new(
        horizon: f64,
        steps_per_year: f64,
        r: Vec<f64>,
        mu: Vec<DVector<f64>>,
        sigma: Vec<DMatrix<f64>>,
        relaxed: bool,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(PsaharaError::Market(format!(
                "horizon T = {horizon} must be positive"
            )));
        }
        if !(steps_per_year > 0.0) {
            return Err(PsaharaError::Market(
                "steps_per_year must be positive".into(),
            ));
        }
        let n_cells = ((horizon * steps_per_year).round() as usize).max(1);
        let broadcast = |len: usize, what: &str| -> Result<()> {
            if len == 1 || len == n_cells {
                Ok(())
            } else {
                Err(PsaharaError::Market(format!(
                    "{what} has {len} cells, expected 1 or {n_cells}"
                )))
            }
        };
        broadcast(r.len(), "r")?;
        broadcast(mu.len(), "mu")?;
        broadcast(sigma.len(), "sigma")?;
        let pick = |len: usize, i: usize| if len == 1 { 0 } else { i };
        let m = mu[0].len();
        let q = sigma[0].ncols();
        if m == 0 || q == 0 {
            return Err(PsaharaError::Market("empty drift or volatility".into()));
        }
        let mut model = MarketModel {
            horizon,
            steps_per_year,
            relaxed,
            dt: horizon / n_cells as f64,
            r: Vec::with_capacity(n_cells),
            mu: Vec::with_capacity(n_cells),
            sigma: Vec::with_capacity(n_cells),
            theta: Vec::with_capacity(n_cells),
            premium: Vec::with_capacity(n_cells),
            cum_r: vec![0.0; n_cells + 1],
            cum_theta_sq: vec![0.0; n_cells + 1],
        };
        for i in 0..n_cells {
            let ri = r[pick(r.len(), i)];
            let mui = mu[pick(mu.len(), i)].clone();
            let si = sigma[pick(sigma.len(), i)].clone();
            if mui.len() != m || si.nrows() != m || si.ncols() != q {
                return Err(PsaharaError::Market(format!(
                    "cell {i}: inconsistent dimensions"
                )));
            }
            if q < m {
                return Err(PsaharaError::Market(format!(
                    "need q >= m, got m = {m}, q = {q}"
                )));
            }
            if !ri.is_finite() || mui.iter().chain(si.iter()).any(|v| !v.is_finite()) {
                return Err(PsaharaError::Market(format!(
                    "cell {i}: non-finite coefficient"
                )));
            }
            if !relaxed && mui.iter().any(|&v| !(v > ri)) {
                return Err(PsaharaError::Market(format!(
                    "cell {i}: every drift must exceed r = {ri}"
                )));
            }
            let (premium, theta) = price_of_risk(&mui, ri, &si)?;
            model.cum_r[i + 1] = model.cum_r[i] + ri * model.dt;
            model.cum_theta_sq[i + 1] = model.cum_theta_sq[i] + theta.norm_squared() * model.dt;
            model.r.push(ri);
            model.mu.push(mui);
            model.sigma.push(si);
            model.theta.push(theta);
            model.premium.push(premium);
        }
        Ok(model)
    }

    /// Constant coefficients with the strict `mu > r` requirement.
    pub fn constant(
        horizon: f64,
        steps_per_year: f64,
        r: f64,
        mu: DVector<f64>,
        sigma: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(
            horizon,
            steps_per_year,
            vec![r],
            vec![mu],
            vec![sigma],
            false,
        )
    }

    /// Constant coefficients allowing `mu <= r`.
    pub fn constant_relaxed(
        horizon: f64,
        steps_per_year: f64,
        r: f64,
        mu: DVector<f64>,
        sigma: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(
            horizon,
            steps_per_year,
            vec![r],
            vec![mu],
            vec![sigma],
            true,
        )
    }

    /// One asset, one Brownian motion.
    pub fn scalar(horizon: f64, r: f64, mu: f64, sigma: f64) -> Result<Self> {
        Self::constant(
            horizon,
            DEFAULT_STEPS_PER_YEAR,
            r,
            DVector::from_element(1, mu),
            DMatrix::from_element(1, 1, sigma),
        )
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps_per_year(&self) -> f64 {
        self.steps_per_year
    }

    pub fn n_cells(&self) -> usize {
        self.r.len()
    }

    pub fn cell_width(&self) -> f64 {
        self.dt
    }

    pub fn is_relaxed(&self) -> bool {
        self.relaxed
    }

    /// Number of risky assets.
    pub fn m(&self) -> usize {
        self.mu[0].len()
    }

    /// Number of Brownian motions.
    pub fn q(&self) -> usize {
        self.sigma[0].ncols()
    }

    /// Index of the cell containing `t` (the last cell owns `T`).
    pub fn cell(&self, t: f64) -> usize {
        let i = (t / self.dt).floor();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.n_cells() - 1)
        }
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.r[self.cell(t)]
    }

    pub fn drift(&self, t: f64) -> &DVector<f64> {
        &self.mu[self.cell(t)]
    }

    pub fn vol(&self, t: f64) -> &DMatrix<f64> {
        &self.sigma[self.cell(t)]
    }

    /// Market price of risk, the minimum-norm solution of `sigma theta = mu - r 1`.
    pub fn theta_at(&self, t: f64) -> &DVector<f64> {
        &self.theta[self.cell(t)]
    }

    /// `(sigma sigma^T)^{-1} (mu - r 1)`.
    pub fn premium(&self, t: f64) -> &DVector<f64> {
        &self.premium[self.cell(t)]
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(PsaharaError::Domain(format!(
                "t = {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    fn prefix(cum: &[f64], vals: impl Fn(usize) -> f64, dt: f64, n: usize, t: f64) -> f64 {
        let i = (t / dt).floor();
        let i = if i <= 0.0 { 0 } else { (i as usize).min(n - 1) };
        cum[i] + (t - i as f64 * dt) * vals(i)
    }

    fn cum_rate(&self, t: f64) -> f64 {
        Self::prefix(&self.cum_r, |i| self.r[i], self.dt, self.n_cells(), t)
    }

    fn cum_theta(&self, t: f64) -> f64 {
        Self::prefix(
            &self.cum_theta_sq,
            |i| self.theta[i].norm_squared(),
            self.dt,
            self.n_cells(),
            t,
        )
    }

    /// `int_t^u r(s) ds`.
    pub fn rate_integral(&self, t: f64, u: f64) -> Result<f64> {
        self.check_time(t)?;
        self.check_time(u)?;
        if t > u {
            return Err(PsaharaError::Domain(format!("t = {t} > {u}")));
        }
        if t == u {
            return Ok(0.0);
        }
        Ok(self.cum_rate(u) - self.cum_rate(t))
    }

    /// `int_t^u |theta(s)|^2 ds`.
    pub fn theta_sq_integral(&self, t: f64, u: f64) -> Result<f64> {
        self.check_time(t)?;
        self.check_time(u)?;
        if t > u {
            return Err(PsaharaError::Domain(format!("t = {t} > {u}")));
        }
        if t == u {
            return Ok(0.0);
        }
        Ok((self.cum_theta(u) - self.cum_theta(t)).max(0.0))
    }

    /// Integrals over `[t, T]`.
    pub fn integrals(&self, t: f64) -> Result<KernelIntegrals> {
        Ok(KernelIntegrals {
            rate: self.rate_integral(t, self.horizon)?,
            theta_sq: self.theta_sq_integral(t, self.horizon)?,
        })
    }

    /// Mean and variance of `log(xi_u / xi_t)`.
    pub fn kernel_terminal_law(&self, t: f64, u: f64) -> Result<(f64, f64)> {
        let r = self.rate_integral(t, u)?;
        let v = self.theta_sq_integral(t, u)?;
        Ok((-(r + 0.5 * v), v))
    }

    /// Market with the same volatility and rate but drift `mu = r 1`.
    pub fn without_premium(&self) -> Result<Self> {
        let mu = self
            .r
            .iter()
            .zip(&self.mu)
            .map(|(&r, m)| DVector::from_element(m.len(), r))
            .collect();
        Self::new(
            self.horizon,
            self.steps_per_year,
            self.r.clone(),
            mu,
            self.sigma.clone(),
            true,
        )
    }
}

/// Returns `((sigma sigma^T)^{-1}(mu - r 1), sigma^T (sigma sigma^T)^{-1}(mu - r 1))`.
fn price_of_risk(
    mu: &DVector<f64>,
    r: f64,
    sigma: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let gram = sigma * sigma.transpose();
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| PsaharaError::Market("sigma sigma^T is not positive definite".into()))?;
    let excess = mu.map(|v| v - r);
    let premium = chol.solve(&excess);
    let theta = sigma.transpose() * &premium;
    let resid = (sigma * &theta - &excess).amax();
    if !(resid <= 1e-10 * excess.amax().max(1.0)) {
        return Err(PsaharaError::Market(format!(
            "sigma sigma^T is ill-conditioned (residual {resid:e})"
        )));
    }
    Ok((premium, theta))
}

/// Market price of risk at `t`.
pub fn theta(t: f64, m: &MarketModel) -> Result<DVector<f64>> {
    m.check_time(t)?;
    Ok(m.theta_at(t).clone())
}

/// `int_t^u |theta|^2`.
pub fn theta_sq_integral(t: f64, u: f64, m: &MarketModel) -> Result<f64> {
    m.theta_sq_integral(t, u)
}

/// `int_t^u r`.
pub fn rate_integral(t: f64, u: f64, m: &MarketModel) -> Result<f64> {
    m.rate_integral(t, u)
}

/// Law of `log Z_{t,u}` with `Z = xi_u / xi_t`; `xi_t` must be positive.
pub fn kernel_terminal_law(t: f64, u: f64, xi_t: f64, m: &MarketModel) -> Result<(f64, f64)> {
    if !(xi_t > 0.0) {
        return Err(PsaharaError::Domain(format!(
            "xi_t = {xi_t} must be positive"
        )));
    }
    m.kernel_terminal_law(t, u)
}

// ---- JSON form ----

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateSpec {
    Scalar(f64),
    Path(Vec<f64>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DriftSpec {
    Scalar(f64),
    Vector(Vec<f64>),
    Path(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VolSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
    Path(Vec<Vec<Vec<f64>>>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarketData {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default = "default_spy")]
    pub steps_per_year: f64,
    pub r: RateSpec,
    pub mu: DriftSpec,
    pub sigma: VolSpec,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub relaxed: bool,
}

fn default_spy() -> f64 {
    DEFAULT_STEPS_PER_YEAR
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = rows.len();
    let q = rows.first().map_or(0, |r| r.len());
    if m == 0 || q == 0 || rows.iter().any(|r| r.len() != q) {
        return Err(PsaharaError::Market(
            "volatility rows must be non-empty and equal length".into(),
        ));
    }
    Ok(DMatrix::from_fn(m, q, |i, j| rows[i][j]))
}

fn rows_of(mat: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..mat.nrows())
        .map(|i| mat.row(i).iter().copied().collect())
        .collect()
}

impl TryFrom<MarketData> for MarketModel {
    type Error = PsaharaError;
    fn try_from(d: MarketData) -> Result<Self> {
        let r = match d.r {
            RateSpec::Scalar(v) => vec![v],
            RateSpec::Path(v) => v,
        };
        let mu: Vec<DVector<f64>> = match d.mu {
            DriftSpec::Scalar(v) => vec![DVector::from_element(1, v)],
            DriftSpec::Vector(v) => vec![DVector::from_vec(v)],
            DriftSpec::Path(p) => p.into_iter().map(DVector::from_vec).collect(),
        };
        let sigma: Vec<DMatrix<f64>> = match d.sigma {
            VolSpec::Scalar(v) => vec![DMatrix::from_element(1, 1, v)],
            VolSpec::Matrix(rows) => vec![matrix_from_rows(&rows)?],
            VolSpec::Path(cells) => cells
                .iter()
                .map(|c| matrix_from_rows(c))
                .collect::<Result<_>>()?,
        };
        if r.is_empty() || mu.is_empty() || sigma.is_empty() {
            return Err(PsaharaError::Market("empty coefficient path".into()));
        }
        MarketModel::new(d.horizon, d.steps_per_year, r, mu, sigma, d.relaxed)
    }
}

impl From<&MarketModel> for MarketData {
    fn from(m: &MarketModel) -> Self {
        let const_r = m.r.iter().all(|&v| v == m.r[0]);
        let const_mu = m.mu.iter().all(|v| v == &m.mu[0]);
        let const_sigma = m.sigma.iter().all(|v| v == &m.sigma[0]);
        MarketData {
            horizon: m.horizon,
            steps_per_year: m.steps_per_year,
            r: if const_r {
                RateSpec::Scalar(m.r[0])
            } else {
                RateSpec::Path(m.r.clone())
            },
            mu: if const_mu {
                DriftSpec::Vector(m.mu[0].iter().copied().collect())
            } else {
                DriftSpec::Path(m.mu.iter().map(|v| v.iter().copied().collect()).collect())
            },
            sigma: if const_sigma {
                VolSpec::Matrix(rows_of(&m.sigma[0]))
            } else {
                VolSpec::Path(m.sigma.iter().map(rows_of).collect())
            },
            relaxed: m.relaxed,
        }
    }
}

impl Serialize for MarketModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MarketData::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for MarketModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let data = MarketData::deserialize(d)?;
        MarketModel::try_from(data).map_err(serde::de::Error::custom)
    }
}
