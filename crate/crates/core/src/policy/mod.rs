//! Closed-form optimal wealth and portfolio for a concave piecewise SAHARA
//! utility in a complete market.
//!
//! Every quantity is a finite sum over envelope pieces of normal CDF or
//! density terms; powers of `gamma / (y xi)` are carried in log space.

pub mod incentive;

use crate::envelope::is_concave;
use crate::error::{PsaharaError, Result};
use crate::market::{KernelIntegrals, MarketModel};
use crate::normal::{delta, exp_clamped, log_delta, log_pdf, pdf};
use crate::utility::PiecewiseUtility;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Absolute budget tolerance for the multiplier.
pub const BUDGET_TOL: f64 = 1e-8;

/// The `g` functions on `[t, T]`, taking `log z` so that `z = 0` and
/// `z = inf` map to the infinite sentinels.
#[derive(Clone, Copy, Debug)]
pub struct KernelArgs {
    pub rate: f64,
    pub theta_sq: f64,
    pub sqrt_theta: f64,
}

impl KernelArgs {
    pub fn new(ints: KernelIntegrals) -> Self {
        KernelArgs {
            rate: ints.rate,
            theta_sq: ints.theta_sq,
            sqrt_theta: ints.theta_sq.sqrt(),
        }
    }

    pub fn at(market: &MarketModel, t: f64) -> Result<Self> {
        if !(t < market.horizon()) {
            return Err(PsaharaError::Domain(format!(
                "t = {t} must be before T = {}",
                market.horizon()
            )));
        }
        Ok(Self::new(market.integrals(t)?))
    }

    pub fn g0(&self, log_z: f64) -> f64 {
        if log_z == f64::INFINITY {
            return f64::NEG_INFINITY;
        }
        if log_z == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        -(log_z + self.rate - 0.5 * self.theta_sq) / self.sqrt_theta
    }

    pub fn g1(&self, log_z: f64, alpha: f64) -> f64 {
        self.g0(log_z) - self.sqrt_theta / alpha
    }

    pub fn g2(&self, log_z: f64, alpha: f64) -> f64 {
        self.g0(log_z) + self.sqrt_theta / alpha
    }
}

fn check_z(z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(PsaharaError::Domain(format!("z = {z} must be positive")));
    }
    Ok(z.ln())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) {
        return Err(PsaharaError::Domain(format!(
            "alpha = {alpha} must be positive"
        )));
    }
    Ok(())
}

pub fn g0(z: f64, t: f64, market: &MarketModel) -> Result<f64> {
    let lz = check_z(z)?;
    Ok(KernelArgs::at(market, t)?.g0(lz))
}

pub fn g1(z: f64, alpha: f64, t: f64, market: &MarketModel) -> Result<f64> {
    check_alpha(alpha)?;
    let lz = check_z(z)?;
    Ok(KernelArgs::at(market, t)?.g1(lz, alpha))
}

pub fn g2(z: f64, alpha: f64, t: f64, market: &MarketModel) -> Result<f64> {
    check_alpha(alpha)?;
    let lz = check_z(z)?;
    Ok(KernelArgs::at(market, t)?.g2(lz, alpha))
}

/// Maximiser of `E(x) - y x`; slope-coincidence ties resolve to the kink.
pub fn terminal_wealth(y_xi: f64, env: &PiecewiseUtility) -> Result<f64> {
    if !(y_xi > 0.0) {
        return Err(PsaharaError::Domain(format!(
            "y xi = {y_xi} must be positive"
        )));
    }
    let check = is_concave(env);
    if !check.concave {
        return Err(PsaharaError::NotConcave(format!("{:?}", check.violation)));
    }
    Ok(terminal_wealth_unchecked(y_xi, env))
}

pub(crate) fn terminal_wealth_unchecked(y_xi: f64, env: &PiecewiseUtility) -> f64 {
    let n = env.n();
    for k in 0..=n {
        if k >= 1 && y_xi >= env.right_slope(k) {
            return env.a(k);
        }
        let piece = &env.pieces()[k];
        if (k == n || y_xi > env.left_slope(k + 1)) && piece.alpha > 0.0 {
            let lo = if k == 0 { f64::NEG_INFINITY } else { env.a(k) };
            let hi = if k == n { f64::INFINITY } else { env.a(k + 1) };
            return piece.inverse_marginal(y_xi).clamp(lo, hi);
        }
    }
    env.a(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WealthComponents {
    /// Per-piece kink atoms (entry 0 is always zero).
    pub x_d: Vec<f64>,
    pub x_b: Vec<f64>,
    pub x_r: Vec<f64>,
    pub x_rbar: Vec<f64>,
    pub sum_d: f64,
    pub sum_b: f64,
    pub sum_r: f64,
    pub sum_rbar: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioTerms {
    pub pi1: Vec<f64>,
    pub pi2: Vec<f64>,
    pub pi3: Vec<f64>,
    pub pi4: Vec<f64>,
    pub total: Vec<f64>,
    /// Per-piece `b_{t,k}`.
    pub b: Vec<f64>,
}

/// Scalar multipliers of `(sigma sigma^T)^{-1}(mu - r 1)` for each term.
#[derive(Clone, Copy, Debug, Default)]
struct Sensitivities {
    s1: f64,
    s2: f64,
    s3: f64,
    s4: f64,
}

impl Sensitivities {
    /// `-y dX/dy`, equivalently `-xi dX/dxi`.
    fn total(&self) -> f64 {
        self.s1 + self.s2 + self.s3 + self.s4
    }
}

struct Evaluation {
    wealth: WealthComponents,
    sens: Sensitivities,
    b: Vec<f64>,
}

fn finish(x_d: Vec<f64>, x_b: Vec<f64>, x_r: Vec<f64>, x_rbar: Vec<f64>) -> WealthComponents {
    let sum_d: f64 = x_d.iter().sum();
    let sum_b: f64 = x_b.iter().sum();
    let sum_r: f64 = x_r.iter().sum();
    let sum_rbar: f64 = x_rbar.iter().sum();
    WealthComponents {
        total: sum_d + sum_b + sum_r + sum_rbar,
        x_d,
        x_b,
        x_r,
        x_rbar,
        sum_d,
        sum_b,
        sum_r,
        sum_rbar,
    }
}

/// Closed-form wealth and sensitivities at state `log(y xi)`.
fn evaluate(env: &PiecewiseUtility, ka: &KernelArgs, log_yxi: f64) -> Evaluation {
    let n = env.n();
    let len = n + 1;
    let mut x_d = vec![0.0; len];
    let mut x_b = vec![0.0; len];
    let mut x_r = vec![0.0; len];
    let mut x_rbar = vec![0.0; len];
    let mut b = vec![0.0; len];
    let disc = (-ka.rate).exp();
    if ka.theta_sq <= 0.0 {
        return degenerate(env, ka, log_yxi);
    }
    let sq = ka.sqrt_theta;
    let lz = |gamma: f64| gamma.ln() - log_yxi;
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..len {
        let piece = &env.pieces()[k];
        if k >= 1 {
            let hi = ka.g0(lz(env.right_slope(k)));
            let lo = ka.g0(lz(env.left_slope(k)));
            let a = env.a(k);
            x_d[k] = disc * a * delta(hi, lo);
            s3 += disc * a * (pdf(hi) - pdf(lo));
        }
        if piece.alpha == 0.0 {
            continue;
        }
        let inv = 1.0 / piece.alpha;
        // z_lo = gamma_{k+1}^-, z_hi = gamma_k^+; g is decreasing so a0 >= b0
        let a0 = ka.g0(lz(env.left_slope(k + 1)));
        let b0 = ka.g0(lz(env.right_slope(k)));
        x_b[k] = disc * piece.d * delta(a0, b0);
        s4 += disc * piece.d * (pdf(a0) - pdf(b0));

        let shift = sq * inv;
        let (a1, b1) = (a0 - shift, b0 - shift);
        let (a2, b2) = (a0 + shift, b0 + shift);
        let e1 = (-1.0 + inv) * (ka.rate + 0.5 * ka.theta_sq * inv);
        let e2 = (-1.0 - inv) * (ka.rate - 0.5 * ka.theta_sq * inv);
        let lk = piece.gamma.ln() - log_yxi;
        let up = e1 + lk * inv;
        let down = e2 - lk * inv;
        let ld1 = log_delta(a1, b1);
        let ld2 = log_delta(a2, b2);
        x_r[k] = 0.5 * exp_clamped(up + ld1);
        let beta_sq = piece.beta * piece.beta;
        if beta_sq > 0.0 {
            x_rbar[k] = -0.5 * beta_sq * exp_clamped(down + ld2);
            let log_b = 2.0 * piece.beta.ln()
                + 2.0 * (-ka.rate + 0.5 * ka.theta_sq * inv * inv)
                + ld1
                + ld2;
            b[k] = exp_clamped(log_b);
        }
        s1 += inv * (x_r[k] + x_rbar[k]).hypot(b[k].sqrt());
        let arc_up = 0.5 * (exp_clamped(up + log_pdf(a1)) - exp_clamped(up + log_pdf(b1)));
        let arc_down = if beta_sq > 0.0 {
            0.5 * beta_sq * (exp_clamped(down + log_pdf(a2)) - exp_clamped(down + log_pdf(b2)))
        } else {
            0.0
        };
        s2 += arc_up - arc_down;
    }
    Evaluation {
        wealth: finish(x_d, x_b, x_r, x_rbar),
        sens: Sensitivities {
            s1,
            s2: -s2 / sq,
            s3: -s3 / sq,
            s4: -s4 / sq,
        },
        b,
    }
}

/// No residual risk on `[t, T]`: terminal wealth is known, discounted.
fn degenerate(env: &PiecewiseUtility, ka: &KernelArgs, log_yxi: f64) -> Evaluation {
    let len = env.n() + 1;
    let disc = (-ka.rate).exp();
    let y_xi_t = (log_yxi - ka.rate).exp();
    let x = terminal_wealth_unchecked(y_xi_t, env);
    let mut x_d = vec![0.0; len];
    let mut x_b = vec![0.0; len];
    let mut x_r = vec![0.0; len];
    let mut x_rbar = vec![0.0; len];
    let k = env.locate(x);
    let piece = &env.pieces()[k];
    if k >= 1 && x == env.a(k) && y_xi_t >= env.right_slope(k) {
        x_d[k] = disc * x;
    } else if piece.alpha > 0.0 {
        let l = (piece.gamma / y_xi_t).ln() / piece.alpha;
        x_b[k] = disc * piece.d;
        x_r[k] = disc * 0.5 * l.exp();
        x_rbar[k] = -disc * 0.5 * piece.beta * piece.beta * (-l).exp();
    } else {
        x_d[k] = disc * x;
    }
    Evaluation {
        wealth: finish(x_d, x_b, x_r, x_rbar),
        sens: Sensitivities::default(),
        b: vec![0.0; len],
    }
}

fn check_endpoints(env: &PiecewiseUtility) -> Result<()> {
    let p = env.pieces();
    if !(p[0].alpha > 0.0) || !(p[p.len() - 1].alpha > 0.0) {
        return Err(PsaharaError::NonCoercive(
            "first and last envelope pieces must have alpha > 0".into(),
        ));
    }
    Ok(())
}

fn check_envelope(env: &PiecewiseUtility) -> Result<()> {
    let check = is_concave(env);
    if !check.concave {
        return Err(PsaharaError::NotConcave(format!("{:?}", check.violation)));
    }
    check_endpoints(env)
}

/// Initial cost `X_0` of the terminal claim at multiplier `y`.
pub fn budget(env: &PiecewiseUtility, market: &MarketModel, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(PsaharaError::Domain(format!(
            "multiplier {y} must be positive"
        )));
    }
    let ka = KernelArgs::at(market, 0.0)?;
    Ok(evaluate(env, &ka, y.ln()).wealth.total)
}

/// Lagrange multiplier matching the initial budget `x0`.
pub fn solve_multiplier(env: &PiecewiseUtility, market: &MarketModel, x0: f64) -> Result<f64> {
    check_envelope(env)?;
    if !x0.is_finite() {
        return Err(PsaharaError::Domain(format!("x0 = {x0} must be finite")));
    }
    let ka = KernelArgs::at(market, 0.0)?;
    let f = |ly: f64| evaluate(env, &ka, ly).wealth.total - x0;
    let step = 10f64.ln();
    let (mut lo, mut hi);
    let f1 = f(0.0);
    if f1 == 0.0 {
        return Ok(1.0);
    }
    if f1 > 0.0 {
        lo = 0.0;
        hi = step;
        let mut i = 0;
        while f(hi) > 0.0 {
            lo = hi;
            hi += step;
            i += 1;
            if i >= 60 {
                return Err(PsaharaError::Bracket(format!(
                    "x0 = {x0} below the attainable range"
                )));
            }
        }
    } else {
        hi = 0.0;
        lo = -step;
        let mut i = 0;
        while f(lo) < 0.0 {
            hi = lo;
            lo -= step;
            i += 1;
            if i >= 60 {
                return Err(PsaharaError::Bracket(format!(
                    "x0 = {x0} above the attainable range"
                )));
            }
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut ly = 0.5 * (lo + hi);
    let mut best = f(ly).abs();
    for _ in 0..5 {
        let ev = evaluate(env, &ka, ly);
        let resid = ev.wealth.total - x0;
        // dX/d(log y) = -S
        let slope = -ev.sens.total();
        if !(slope < 0.0) {
            break;
        }
        let cand = ly - resid / slope;
        let r = f(cand).abs();
        if !(r < best) {
            break;
        }
        best = r;
        ly = cand;
    }
    if !(best < BUDGET_TOL * x0.abs().max(1.0)) {
        return Err(PsaharaError::Bracket(format!(
            "budget residual {best:e} after root search"
        )));
    }
    Ok(ly.exp())
}

/// Solved optimal policy; immutable after construction.
#[derive(Clone, Debug, Serialize)]
pub struct OptimalPolicy {
    envelope: PiecewiseUtility,
    market: MarketModel,
    x0: f64,
    y_star: f64,
}

#[derive(Deserialize)]
struct PolicyData {
    envelope: PiecewiseUtility,
    market: MarketModel,
    x0: f64,
    y_star: Option<f64>,
}

impl<'de> Deserialize<'de> for OptimalPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let data = PolicyData::deserialize(d)?;
        let policy = match data.y_star {
            Some(y) => OptimalPolicy::with_multiplier(data.envelope, data.market, data.x0, y),
            None => OptimalPolicy::solve(data.envelope, data.market, data.x0),
        };
        policy.map_err(serde::de::Error::custom)
    }
}

impl OptimalPolicy {
    pub fn solve(envelope: PiecewiseUtility, market: MarketModel, x0: f64) -> Result<Self> {
        let y_star = solve_multiplier(&envelope, &market, x0)?;
        Ok(OptimalPolicy {
            envelope,
            market,
            x0,
            y_star,
        })
    }

    /// Rebuilds a policy from a stored multiplier, re-checking the budget.
    pub fn with_multiplier(
        envelope: PiecewiseUtility,
        market: MarketModel,
        x0: f64,
        y_star: f64,
    ) -> Result<Self> {
        check_envelope(&envelope)?;
        let resid = (budget(&envelope, &market, y_star)? - x0).abs();
        if !(resid < BUDGET_TOL * x0.abs().max(1.0)) {
            return Err(PsaharaError::Config(format!(
                "stored multiplier misses the budget by {resid:e}"
            )));
        }
        Ok(OptimalPolicy {
            envelope,
            market,
            x0,
            y_star,
        })
    }

    /// Same policy with the multiplier scaled by `factor` and the budget
    /// left unmatched; used for negative controls.
    pub fn with_scaled_multiplier(&self, factor: f64) -> Self {
        OptimalPolicy {
            y_star: self.y_star * factor,
            ..self.clone()
        }
    }

    pub fn envelope(&self) -> &PiecewiseUtility {
        &self.envelope
    }

    pub fn market(&self) -> &MarketModel {
        &self.market
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn y_star(&self) -> f64 {
        self.y_star
    }

    pub fn horizon(&self) -> f64 {
        self.market.horizon()
    }

    fn check_state(&self, t: f64, xi: f64) -> Result<KernelArgs> {
        if !(xi > 0.0) || !xi.is_finite() {
            return Err(PsaharaError::Domain(format!(
                "xi = {xi} must be positive and finite"
            )));
        }
        KernelArgs::at(&self.market, t)
    }

    fn eval(&self, t: f64, xi: f64) -> Result<Evaluation> {
        let ka = self.check_state(t, xi)?;
        Ok(evaluate(&self.envelope, &ka, self.y_star.ln() + xi.ln()))
    }

    /// Optimal terminal wealth at kernel value `xi_T`.
    pub fn terminal_wealth(&self, xi: f64) -> Result<f64> {
        terminal_wealth(self.y_star * xi, &self.envelope)
    }

    pub fn wealth_components(&self, t: f64, xi: f64) -> Result<WealthComponents> {
        Ok(self.eval(t, xi)?.wealth)
    }

    pub fn wealth(&self, t: f64, xi: f64) -> Result<f64> {
        Ok(self.eval(t, xi)?.wealth.total)
    }

    pub fn portfolio(&self, t: f64, xi: f64) -> Result<PortfolioTerms> {
        let ev = self.eval(t, xi)?;
        let c = self.market.premium(t);
        let term = |s: f64| -> Vec<f64> { c.iter().map(|v| v * s).collect() };
        let pi1 = term(ev.sens.s1);
        let pi2 = term(ev.sens.s2);
        let pi3 = term(ev.sens.s3);
        let pi4 = term(ev.sens.s4);
        let total = (0..c.len())
            .map(|i| pi1[i] + pi2[i] + pi3[i] + pi4[i])
            .collect();
        Ok(PortfolioTerms {
            pi1,
            pi2,
            pi3,
            pi4,
            total,
            b: ev.b,
        })
    }

    /// Wealth and total portfolio in one evaluation.
    pub fn state(&self, t: f64, xi: f64) -> Result<(f64, DVector<f64>)> {
        let ev = self.eval(t, xi)?;
        Ok((ev.wealth.total, self.market.premium(t) * ev.sens.total()))
    }

    /// Limits of `pi / X` as `xi -> 0` and `xi -> inf`.
    pub fn asymptotic_limits(&self, t: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        self.market.integrals(t)?;
        let p = self.envelope.pieces();
        let (first, last) = (p[0].alpha, p[p.len() - 1].alpha);
        if !(first > 0.0) || !(last > 0.0) {
            return Err(PsaharaError::Domain(
                "limits need alpha_0 > 0 and alpha_n > 0".into(),
            ));
        }
        let c = self.market.premium(t);
        Ok((c / last, -c / first))
    }
}

/// A solved strategy that can be driven along kernel paths.
pub trait Strategy: Sync {
    fn market(&self) -> &MarketModel;
    fn x0(&self) -> f64;
    /// Optimal terminal wealth at kernel value `xi_T`.
    fn terminal_wealth(&self, xi: f64) -> f64;
    /// Wealth and total portfolio at `(t, xi_t)` for `t < T`.
    fn state(&self, t: f64, xi: f64) -> Result<(f64, DVector<f64>)>;
}

impl Strategy for OptimalPolicy {
    fn market(&self) -> &MarketModel {
        &self.market
    }

    fn x0(&self) -> f64 {
        self.x0
    }

    fn terminal_wealth(&self, xi: f64) -> f64 {
        terminal_wealth_unchecked(self.y_star * xi, &self.envelope)
    }

    fn state(&self, t: f64, xi: f64) -> Result<(f64, DVector<f64>)> {
        OptimalPolicy::state(self, t, xi)
    }
}

pub fn wealth_components(t: f64, xi: f64, policy: &OptimalPolicy) -> Result<WealthComponents> {
    policy.wealth_components(t, xi)
}

pub fn portfolio(t: f64, xi: f64, policy: &OptimalPolicy) -> Result<PortfolioTerms> {
    policy.portfolio(t, xi)
}

pub fn asymptotic_limits(policy: &OptimalPolicy) -> Result<(DVector<f64>, DVector<f64>)> {
    policy.asymptotic_limits(0.0)
}
