//! Daily-rebalanced backtest of a solved strategy on a price panel.
//!
//! The kernel state is tracked by pulling the observed log-price moves back
//! to Brownian increments through the model volatility.

use crate::error::{PsaharaError, Result};
use crate::market::MarketModel;
use crate::policy::Strategy;
use crate::volatility::{
    assemble_sigma, historical_vol, mle_sigma, read_table, sample_correlation, smile_average,
    PutQuote, ReturnsPanel, VolEstimate,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Read;

/// Trading days per year used for the default period length.
pub const TRADING_DAYS: f64 = 252.0;

/// Adjusted close prices, one row per date.
#[derive(Clone, Debug, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<String>,
    pub assets: Vec<String>,
    pub prices: DMatrix<f64>,
}

fn dates_increasing(dates: &[String]) -> bool {
    let numeric: Option<Vec<f64>> = dates.iter().map(|d| d.parse::<f64>().ok()).collect();
    match numeric {
        Some(v) => v.windows(2).all(|w| w[0] < w[1]),
        None => dates.windows(2).all(|w| w[0] < w[1]),
    }
}

impl PricePanel {
    pub fn new(dates: Vec<String>, assets: Vec<String>, prices: DMatrix<f64>) -> Result<Self> {
        if dates.len() != prices.nrows() || assets.len() != prices.ncols() {
            return Err(PsaharaError::Data(
                "panel labels do not match the data shape".into(),
            ));
        }
        if let Some(bad) = prices.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(PsaharaError::Data(format!(
                "price {bad} is not strictly positive"
            )));
        }
        if !dates_increasing(&dates) {
            return Err(PsaharaError::Data(
                "dates must be strictly increasing".into(),
            ));
        }
        Ok(PricePanel {
            dates,
            assets,
            prices,
        })
    }

    /// Reads `date,asset1,asset2,...` rows of prices.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let (dates, assets, rows) = read_table(reader)?;
        let data = DMatrix::from_fn(rows.len(), assets.len(), |i, j| rows[i][j]);
        Self::new(dates, assets, data)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["date".to_string()];
        header.extend(self.assets.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.dates[i].clone()];
            row.extend(self.prices.row(i).iter().map(|p| format!("{p:e}")));
            w.write_record(&row)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| PsaharaError::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| PsaharaError::Data(e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.prices.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn m(&self) -> usize {
        self.prices.ncols()
    }

    /// Rows `from..to`.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if !(from < to && to <= self.len()) {
            return Err(PsaharaError::Data(format!(
                "row range {from}..{to} outside the panel"
            )));
        }
        Ok(PricePanel {
            dates: self.dates[from..to].to_vec(),
            assets: self.assets.clone(),
            prices: self.prices.rows(from, to - from).into_owned(),
        })
    }

    /// Simple returns `S_{i+1} / S_i - 1` as a returns panel.
    pub fn simple_returns(&self, h: f64) -> Result<ReturnsPanel> {
        if self.len() < 2 {
            return Err(PsaharaError::Data("need at least two prices".into()));
        }
        let n = self.len() - 1;
        let r = DMatrix::from_fn(n, self.m(), |i, j| {
            self.prices[(i + 1, j)] / self.prices[(i, j)] - 1.0
        });
        ReturnsPanel::new(self.dates[1..].to_vec(), self.assets.clone(), r, h)
    }
}

/// Volatility estimator for the fitted market.
#[derive(Clone, Debug, PartialEq)]
pub enum Estimator {
    Historical,
    /// Smile-averaged implied volatilities, one or more quotes per asset.
    Implied(Vec<PutQuote>),
    Mle,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Historical => "historical",
            Estimator::Implied(_) => "implied",
            Estimator::Mle => "mle",
        }
    }
}

/// Fitted market for trading over `horizon` years.
#[derive(Clone, Debug)]
pub struct FittedMarket {
    pub market: MarketModel,
    pub vol: VolEstimate,
    pub mu: DVector<f64>,
}

/// Estimates drift (sample mean of simple returns per year) and volatility
/// on `window`; the trading market uses the constant rate `rf`.
pub fn fit_market(
    window: &PricePanel,
    h: f64,
    rf: f64,
    horizon: f64,
    est: &Estimator,
) -> Result<FittedMarket> {
    let returns = window.simple_returns(h)?;
    let mu = returns.mean_rate();
    let vol = match est {
        Estimator::Historical => historical_vol(&returns)?,
        Estimator::Mle => mle_sigma(&returns)?,
        Estimator::Implied(quotes) => {
            let norms = window
                .assets
                .iter()
                .map(|a| {
                    let own: Vec<PutQuote> =
                        quotes.iter().filter(|q| &q.asset == a).cloned().collect();
                    if own.is_empty() {
                        Err(PsaharaError::Data(format!(
                            "no option quotes for asset {a}"
                        )))
                    } else {
                        smile_average(&own)
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            assemble_sigma(&norms, &sample_correlation(&returns)?)?
        }
    };
    let market = MarketModel::new(
        horizon,
        1.0 / h,
        vec![rf],
        vec![mu.clone()],
        vec![vol.sigma.clone()],
        true,
    )?;
    Ok(FittedMarket { market, vol, mu })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub dates: Vec<String>,
    pub times: Vec<f64>,
    pub wealth: Vec<f64>,
    pub xi: Vec<f64>,
    /// Dollar positions held over each period.
    pub positions: Vec<Vec<f64>>,
    pub daily_returns: Vec<f64>,
    pub simple_return: f64,
    /// Per-period risk-free rate used for the Sharpe ratio.
    pub rf_per_period: f64,
    pub sharpe_ratio: Option<f64>,
    pub max_drawdown: f64,
    pub min_wealth: f64,
    pub max_self_financing_residual: f64,
}

/// `(X_T - X_0) / X_0`.
pub fn simple_return(wealth: &[f64]) -> Result<f64> {
    match (wealth.first(), wealth.last()) {
        (Some(&x0), Some(&xt)) if x0 != 0.0 => Ok((xt - x0) / x0),
        _ => Err(PsaharaError::Data(
            "simple return needs a path with nonzero start".into(),
        )),
    }
}

/// `(mean(r) - rf) / sd(r - rf)` with the sample standard deviation.
pub fn sharpe_ratio(returns: &[f64], rf: f64) -> Result<f64> {
    let n = returns.len();
    if n < 2 {
        return Err(PsaharaError::Data(
            "Sharpe ratio needs at least two returns".into(),
        ));
    }
    let excess: Vec<f64> = returns.iter().map(|r| r - rf).collect();
    let mean = excess.iter().sum::<f64>() / n as f64;
    let var = excess.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(PsaharaError::Data(
            "zero dispersion of excess returns".into(),
        ));
    }
    Ok(mean / sd)
}

/// Period return `(X_{i+1} - X_i) / |X_i|`; sign follows the wealth change
/// even when wealth is negative.
pub fn period_returns(wealth: &[f64]) -> Vec<f64> {
    wealth
        .windows(2)
        .filter(|w| w[0] != 0.0)
        .map(|w| (w[1] - w[0]) / w[0].abs())
        .collect()
}

/// `σᵀ (σσᵀ)⁻¹ v`.
fn pullback(sigma: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = (sigma * sigma.transpose())
        .cholesky()
        .ok_or_else(|| PsaharaError::Market("volatility rows are linearly dependent".into()))?;
    Ok(sigma.transpose() * chol.solve(v))
}

/// Trades `strategy` over every row of `prices`, one period of `h` years each.
pub fn run_backtest<S: Strategy + ?Sized>(
    strategy: &S,
    prices: &PricePanel,
    h: f64,
) -> Result<BacktestReport> {
    let market = strategy.market();
    let m = market.m();
    if prices.m() != m {
        return Err(PsaharaError::Data(format!(
            "panel has {} assets, market has {m}",
            prices.m()
        )));
    }
    let steps = prices.len().saturating_sub(1);
    if steps == 0 || !(h > 0.0) {
        return Err(PsaharaError::Data(
            "need at least two price rows and h > 0".into(),
        ));
    }
    let horizon = market.horizon();
    if steps as f64 * h > horizon * (1.0 + 1e-9) {
        return Err(PsaharaError::Data(format!(
            "{steps} periods of {h} exceed the horizon {horizon}"
        )));
    }
    let mut x = strategy.x0();
    let mut log_xi: f64 = 0.0;
    let mut times = vec![0.0];
    let mut wealth = vec![x];
    let mut xi_path = vec![1.0];
    let mut positions = Vec::with_capacity(steps);
    let mut max_resid: f64 = 0.0;
    for i in 0..steps {
        let t = h * i as f64;
        let t_next = if i + 1 == steps && (steps as f64 * h - horizon).abs() < 1e-9 * horizon {
            horizon
        } else {
            h * (i + 1) as f64
        };
        let dt = t_next - t;
        let (_, pi) = strategy.state(t, log_xi.exp())?;
        let r = market.rate(t);
        let s0 = prices.prices.row(i);
        let s1 = prices.prices.row(i + 1);
        // shares and cash
        let shares: Vec<f64> = (0..m).map(|j| pi[j] / s0[j]).collect();
        let cash = x - pi.sum();
        let growth = (r * dt).exp();
        let next = (0..m).map(|j| shares[j] * s1[j]).sum::<f64>() + cash * growth;
        let asset_ret: Vec<f64> = (0..m).map(|j| s1[j] / s0[j] - 1.0).collect();
        let formula =
            x + (0..m).map(|j| pi[j] * asset_ret[j]).sum::<f64>() + (x - pi.sum()) * (growth - 1.0);
        let scale = x.abs().max(pi.abs().sum()).max(1e-300);
        max_resid = max_resid.max((next - formula).abs() / scale);
        // kernel update through the pulled-back increments
        let sigma = market.vol(t);
        let mu = market.drift(t);
        let half_var = (sigma * sigma.transpose()).diagonal() * 0.5;
        let dlog = DVector::from_fn(m, |j, _| (s1[j] / s0[j]).ln() - (mu[j] - half_var[j]) * dt);
        let dw = pullback(sigma, &dlog)?;
        let (mean, _) = market.kernel_terminal_law(t, t_next)?;
        log_xi += mean - market.theta_at(t).dot(&dw);
        x = next;
        positions.push(pi.iter().copied().collect());
        times.push(t_next);
        wealth.push(x);
        xi_path.push(log_xi.exp());
    }
    let daily_returns = period_returns(&wealth);
    let rf_per_period = (market.rate(0.0) * h).exp() - 1.0;
    let sharpe = sharpe_ratio(&daily_returns, rf_per_period).ok();
    let mut peak = f64::NEG_INFINITY;
    let mut max_dd: f64 = 0.0;
    for &w in &wealth {
        peak = peak.max(w);
        max_dd = max_dd.max(peak - w);
    }
    Ok(BacktestReport {
        dates: prices.dates.clone(),
        times,
        simple_return: simple_return(&wealth)?,
        min_wealth: wealth.iter().copied().fold(f64::INFINITY, f64::min),
        wealth,
        xi: xi_path,
        positions,
        daily_returns,
        rf_per_period,
        sharpe_ratio: sharpe,
        max_drawdown: max_dd,
        max_self_financing_residual: max_resid,
    })
}

/// Exact GBM prices under `market` with `n_steps` equal periods.
pub fn synthetic_panel<R: Rng + ?Sized>(
    market: &MarketModel,
    s0: &[f64],
    n_steps: usize,
    rng: &mut R,
) -> Result<PricePanel> {
    let m = market.m();
    let q = market.q();
    if s0.len() != m || s0.iter().any(|s| !(*s > 0.0)) || n_steps == 0 {
        return Err(PsaharaError::Config(
            "need positive start prices for every asset and n_steps > 0".into(),
        ));
    }
    let h = market.horizon() / n_steps as f64;
    let mut prices = DMatrix::zeros(n_steps + 1, m);
    for j in 0..m {
        prices[(0, j)] = s0[j];
    }
    for i in 0..n_steps {
        let t = h * i as f64;
        let sigma = market.vol(t);
        let mu = market.drift(t);
        let dw = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal) * h.sqrt());
        let shock = sigma * dw;
        for j in 0..m {
            let var = sigma.row(j).norm_squared();
            prices[(i + 1, j)] = prices[(i, j)] * ((mu[j] - 0.5 * var) * h + shock[j]).exp();
        }
    }
    PricePanel::new(
        (0..=n_steps).map(|i| i.to_string()).collect(),
        (0..m).map(|j| format!("asset{}", j + 1)).collect(),
        prices,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub simple_returns: Vec<f64>,
    pub sharpe_ratios: Vec<Option<f64>>,
    pub terminal_wealth: Vec<f64>,
}

/// Backtests on `n` synthetic panels drawn from the strategy's own market.
pub fn run_scenarios<S: Strategy + ?Sized>(
    strategy: &S,
    s0: &[f64],
    n_steps: usize,
    n: usize,
    seed: u64,
) -> Result<ScenarioSummary> {
    use rand::SeedableRng;
    use rayon::prelude::*;
    let h = strategy.market().horizon() / n_steps as f64;
    let reports: Vec<Result<BacktestReport>> = crate::montecarlo::with_thread_pool(|| {
        (0..n)
            .into_par_iter()
            .map(|k| {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                let panel = synthetic_panel(strategy.market(), s0, n_steps, &mut rng)?;
                run_backtest(strategy, &panel, h)
            })
            .collect()
    })?;
    let reports: Vec<BacktestReport> = reports.into_iter().collect::<Result<_>>()?;
    Ok(ScenarioSummary {
        simple_returns: reports.iter().map(|r| r.simple_return).collect(),
        sharpe_ratios: reports.iter().map(|r| r.sharpe_ratio).collect(),
        terminal_wealth: reports.iter().map(|r| *r.wealth.last().unwrap()).collect(),
    })
}
