//! Volatility estimation: historical covariance, Black-Scholes implied
//! volatility with a correlation matrix, and the per-asset MLE.

use crate::error::{PsaharaError, Result};
use crate::normal::{cdf, pdf};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::io::Read;

/// Upper end of the implied-volatility search.
pub const MAX_IMPLIED_VOL: f64 = 5.0;

/// Observations by row, one column per asset.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnsPanel {
    pub dates: Vec<String>,
    pub assets: Vec<String>,
    pub returns: DMatrix<f64>,
    /// Years per observation.
    pub h: f64,
}

impl ReturnsPanel {
    pub fn new(
        dates: Vec<String>,
        assets: Vec<String>,
        returns: DMatrix<f64>,
        h: f64,
    ) -> Result<Self> {
        if !(h > 0.0) {
            return Err(PsaharaError::Data(format!(
                "period length h = {h} must be positive"
            )));
        }
        if dates.len() != returns.nrows() || assets.len() != returns.ncols() {
            return Err(PsaharaError::Data(
                "panel labels do not match the data shape".into(),
            ));
        }
        if returns.iter().any(|v| !v.is_finite()) {
            return Err(PsaharaError::Data("non-finite return".into()));
        }
        Ok(ReturnsPanel {
            dates,
            assets,
            returns,
            h,
        })
    }

    /// Reads `date,asset1,asset2,...` rows of decimal returns.
    pub fn from_csv<R: Read>(reader: R, h: f64) -> Result<Self> {
        let (dates, assets, rows) = read_table(reader)?;
        let m = assets.len();
        let data = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
        Self::new(dates, assets, data, h)
    }

    pub fn n(&self) -> usize {
        self.returns.nrows()
    }

    pub fn m(&self) -> usize {
        self.returns.ncols()
    }

    /// Annualised mean return per asset.
    pub fn mean_rate(&self) -> DVector<f64> {
        let n = self.n() as f64;
        DVector::from_fn(self.m(), |j, _| self.returns.column(j).sum() / n / self.h)
    }
}

/// Dates, column names and rows of a dated numeric table.
pub(crate) type Table = (Vec<String>, Vec<String>, Vec<Vec<f64>>);

/// Reads a dated numeric CSV table.
pub(crate) fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(PsaharaError::Data(
            "expected a date column and at least one asset".into(),
        ));
    }
    let assets: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(PsaharaError::Data(format!(
                "row {} has {} fields",
                line + 1,
                rec.len()
            )));
        }
        dates.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    PsaharaError::Data(format!("row {}: cannot parse {f:?}", line + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((dates, assets, rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolEstimate {
    pub sigma: DMatrix<f64>,
    pub method: String,
    pub norms: Vec<f64>,
}

impl VolEstimate {
    fn new(sigma: DMatrix<f64>, method: &str) -> Self {
        let norms = (0..sigma.nrows()).map(|i| sigma.row(i).norm()).collect();
        VolEstimate {
            sigma,
            method: method.to_string(),
            norms,
        }
    }
}

/// `sigma` with `sigma sigma^T = cov`: Cholesky when positive definite,
/// otherwise eigenvectors scaled by clamped eigenvalue roots.
pub fn factor_psd(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(cov.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Unbiased annualised sample covariance.
pub fn sample_covariance(panel: &ReturnsPanel) -> Result<DMatrix<f64>> {
    let n = panel.n();
    if n < 2 {
        return Err(PsaharaError::Data(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    let m = panel.m();
    let means: Vec<f64> = (0..m).map(|j| panel.returns.column(j).mean()).collect();
    let centered = DMatrix::from_fn(n, m, |i, j| panel.returns[(i, j)] - means[j]);
    Ok(centered.transpose() * centered / ((n - 1) as f64 * panel.h))
}

pub fn historical_vol(panel: &ReturnsPanel) -> Result<VolEstimate> {
    let cov = sample_covariance(panel)?;
    let mut sigma = factor_psd(&cov);
    for i in 0..cov.nrows() {
        if cov[(i, i)] == 0.0 {
            sigma.row_mut(i).fill(0.0);
        }
    }
    Ok(VolEstimate::new(sigma, "historical"))
}

/// Black-Scholes European put.
pub fn bs_put_price(s: f64, k: f64, r: f64, t: f64, vol: f64) -> Result<f64> {
    if !(s > 0.0) || !(k > 0.0) || !(t > 0.0) || !(vol >= 0.0) || !r.is_finite() {
        return Err(PsaharaError::Domain(
            "put pricing needs S, K, T > 0 and vol >= 0".into(),
        ));
    }
    let disc_k = k * (-r * t).exp();
    if vol == 0.0 {
        return Ok((disc_k - s).max(0.0));
    }
    let sd = vol * t.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * vol * vol) * t) / sd;
    let d2 = d1 - sd;
    Ok(disc_k * cdf(-d2) - s * cdf(-d1))
}

fn put_vega(s: f64, k: f64, r: f64, t: f64, vol: f64) -> f64 {
    let sd = vol * t.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * vol * vol) * t) / sd;
    s * pdf(d1) * t.sqrt()
}

/// Volatility reproducing `price`; bisection then Newton on vega.
pub fn implied_vol(price: f64, s: f64, k: f64, r: f64, t: f64) -> Result<f64> {
    let lower = bs_put_price(s, k, r, t, 0.0)?;
    let upper = k * (-r * t).exp();
    if !(price >= lower && price < upper) {
        return Err(PsaharaError::Domain(format!(
            "put price {price} outside the no-arbitrage range [{lower}, {upper})"
        )));
    }
    if price == lower {
        return Ok(0.0);
    }
    let f = |v: f64| bs_put_price(s, k, r, t, v).map(|p| p - price);
    if f(MAX_IMPLIED_VOL)? < 0.0 {
        return Err(PsaharaError::Domain(format!(
            "implied volatility above {MAX_IMPLIED_VOL}"
        )));
    }
    let (mut lo, mut hi) = (0.0, MAX_IMPLIED_VOL);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    let mut v = 0.5 * (lo + hi);
    for _ in 0..50 {
        let resid = f(v)?;
        if resid == 0.0 {
            break;
        }
        let vega = put_vega(s, k, r, t, v);
        let next = v - resid / vega;
        if !(next > lo && next < hi) || !vega.is_finite() || vega <= 0.0 {
            break;
        }
        if resid > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let step = (next - v).abs();
        v = next;
        if step < 1e-15 * v {
            break;
        }
    }
    Ok(v)
}

/// One option quote on one asset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PutQuote {
    pub asset: String,
    pub spot: f64,
    pub strike: f64,
    pub rate: f64,
    pub maturity: f64,
    pub price: f64,
}

/// Arithmetic mean of implied volatilities across quotes.
pub fn smile_average(quotes: &[PutQuote]) -> Result<f64> {
    if quotes.is_empty() {
        return Err(PsaharaError::Data("no option quotes".into()));
    }
    let mut sum = 0.0;
    for q in quotes {
        sum += implied_vol(q.price, q.spot, q.strike, q.rate, q.maturity)?;
    }
    Ok(sum / quotes.len() as f64)
}

/// Reads `asset,spot,strike,rate,maturity,price` rows.
pub fn read_quotes<R: Read>(reader: R) -> Result<Vec<PutQuote>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize()
        .map(|r| r.map_err(PsaharaError::from))
        .collect()
}

fn check_correlation(corr: &DMatrix<f64>) -> Result<()> {
    let m = corr.nrows();
    if corr.ncols() != m || m == 0 {
        return Err(PsaharaError::Data(
            "correlation matrix must be square".into(),
        ));
    }
    for i in 0..m {
        if (corr[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(PsaharaError::Data(format!(
                "correlation diagonal entry {i} is not 1"
            )));
        }
        for j in 0..i {
            let c = corr[(i, j)];
            if (c - corr[(j, i)]).abs() > 1e-12 || !(c.abs() <= 1.0 + 1e-12) {
                return Err(PsaharaError::Data(format!(
                    "invalid correlation entry ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Clamps negative eigenvalues and rescales back to a unit diagonal.
pub fn repair_correlation(corr: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(corr.clone());
    if eig.eigenvalues.min() >= 1e-12 {
        return corr.clone();
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let fixed = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    let d = fixed.diagonal().map(|v| 1.0 / v.max(1e-300).sqrt());
    let mut out = DMatrix::from_fn(fixed.nrows(), fixed.ncols(), |i, j| {
        fixed[(i, j)] * d[i] * d[j]
    });
    out.fill_diagonal(1.0);
    out
}

/// `sigma` with row norms `norms` and row correlations `corr`.
pub fn assemble_sigma(norms: &[f64], corr: &DMatrix<f64>) -> Result<VolEstimate> {
    check_correlation(corr)?;
    if norms.len() != corr.nrows() || norms.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(PsaharaError::Data(
            "norms must be nonnegative, one per asset".into(),
        ));
    }
    let c = repair_correlation(corr);
    let b = factor_psd(&c);
    let mut sigma = b.clone();
    for (i, &norm) in norms.iter().enumerate() {
        let len = b.row(i).norm();
        let scale = if len > 0.0 { norm / len } else { 0.0 };
        sigma.row_mut(i).scale_mut(scale);
    }
    let mut est = VolEstimate::new(sigma, "implied");
    est.norms = norms.to_vec();
    Ok(est)
}

/// Per-asset annualised variance estimate `(1/(n h)) sum (p - mean)^2`.
pub fn mle_vol(panel: &ReturnsPanel) -> Result<Vec<f64>> {
    let n = panel.n();
    if n < 2 {
        return Err(PsaharaError::Data(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    Ok((0..panel.m())
        .map(|j| {
            let col = panel.returns.column(j);
            let mean = col.mean();
            col.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n as f64 * panel.h)
        })
        .collect())
}

/// Sample correlation of the panel columns; constant columns get unit
/// diagonal and zero off-diagonal entries.
pub fn sample_correlation(panel: &ReturnsPanel) -> Result<DMatrix<f64>> {
    let cov = sample_covariance(panel)?;
    let m = cov.nrows();
    Ok(DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            1.0
        } else {
            let s = (cov[(i, i)] * cov[(j, j)]).sqrt();
            if s > 0.0 {
                (cov[(i, j)] / s).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        }
    }))
}

/// MLE variances combined with the sample correlation.
pub fn mle_sigma(panel: &ReturnsPanel) -> Result<VolEstimate> {
    let norms: Vec<f64> = mle_vol(panel)?.iter().map(|v| v.sqrt()).collect();
    let mut est = assemble_sigma(&norms, &sample_correlation(panel)?)?;
    est.method = "mle".into();
    Ok(est)
}
