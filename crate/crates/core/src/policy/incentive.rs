//! Direct formulas for a manager paid `w (X - B)^+ + v X`.
//!
//! The manager's envelope has exactly two curved pieces joined by one
//! tangent line across the benchmark, so wealth and portfolio reduce to a
//! pair of SAHARA arcs. Nothing here goes through the generic envelope or
//! policy code; it serves as an independent route to the same answer.

use super::KernelArgs;
use crate::error::{PsaharaError, Result};
use crate::market::MarketModel;
use crate::normal::{exp_clamped, log_cdf, pdf};
use crate::utility::{compose_with_contract, LinearContract, PiecewiseUtility, SaharaPiece};
use serde::{Deserialize, Serialize};

/// Compensation and base-utility parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncentiveParams {
    pub w: f64,
    pub v: f64,
    pub benchmark: f64,
    pub alpha: f64,
    pub beta: f64,
    pub d: f64,
}

impl IncentiveParams {
    /// `w = 0.2`, `v = 0.02`, `alpha = 2`, `beta = 1`, `d = 0`.
    pub fn standard(benchmark: f64) -> Self {
        IncentiveParams {
            w: 0.2,
            v: 0.02,
            benchmark,
            alpha: 2.0,
            beta: 1.0,
            d: 0.0,
        }
    }

    pub fn base_piece(&self) -> SaharaPiece {
        SaharaPiece::new(self.alpha, self.beta, self.d, 1.0, 0.0)
    }

    pub fn contract(&self) -> Result<LinearContract> {
        LinearContract::incentive(self.w, self.v, self.benchmark)
    }

    /// Manager utility as a function of fund wealth, before concavification.
    pub fn composed_utility(&self) -> Result<PiecewiseUtility> {
        let base = PiecewiseUtility::single(self.base_piece())?;
        compose_with_contract(&base, &self.contract()?)
    }

    fn check(&self) -> Result<()> {
        if !(self.w > 0.0) || !(self.v > 0.0) {
            return Err(PsaharaError::InvalidContract(format!(
                "need w > 0 and v > 0, got {} and {}",
                self.w, self.v
            )));
        }
        if !(self.alpha > 0.0)
            || !(self.beta >= 0.0)
            || !self.benchmark.is_finite()
            || !self.d.is_finite()
        {
            return Err(PsaharaError::InvalidUtility(
                "need alpha > 0, beta >= 0 and finite B, d".into(),
            ));
        }
        Ok(())
    }
}

/// One curved side of the manager's utility, `U(scale x + offset)`.
#[derive(Clone, Copy, Debug)]
struct Side {
    base: SaharaPiece,
    scale: f64,
    offset: f64,
}

impl Side {
    fn value(&self, x: f64) -> f64 {
        self.base.value(self.scale * x + self.offset)
    }

    fn marginal(&self, x: f64) -> f64 {
        self.scale * self.base.marginal(self.scale * x + self.offset)
    }

    fn inverse_marginal(&self, s: f64) -> f64 {
        (self.base.inverse_marginal(s / self.scale) - self.offset) / self.scale
    }

    /// Rescaled SAHARA parameters `(beta', d', gamma')`.
    fn scaled(&self) -> (f64, f64, f64) {
        let a = self.base.alpha;
        (
            self.base.beta / self.scale,
            (self.base.d - self.offset) / self.scale,
            self.scale.powf(1.0 - a),
        )
    }

    /// `sup_x f(x) - s x`.
    fn conjugate(&self, s: f64) -> f64 {
        let x = self.inverse_marginal(s);
        self.value(x) - s * x
    }
}

/// Common tangent of the two sides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tangency {
    pub a1: f64,
    pub a2: f64,
    pub slope: f64,
}

fn sides(p: &IncentiveParams) -> (Side, Side) {
    let base = p.base_piece();
    let low = Side {
        base,
        scale: p.v,
        offset: 0.0,
    };
    let high = Side {
        base,
        scale: p.w + p.v,
        offset: -p.w * p.benchmark,
    };
    (low, high)
}

/// Slope `s` with equal conjugates, bracketed by the marginals at `B`.
pub fn tangency(p: &IncentiveParams) -> Result<Tangency> {
    p.check()?;
    let (low, high) = sides(p);
    let b = p.benchmark;
    let (mut lo, mut hi) = (low.marginal(b).ln(), high.marginal(b).ln());
    if !(lo < hi) {
        return Err(PsaharaError::Tangency { left: 0, right: 1 });
    }
    let gap = |ls: f64| {
        let s = ls.exp();
        high.conjugate(s) - low.conjugate(s)
    };
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let s = x.exp();
        let g = gap(x);
        if g == 0.0 {
            break;
        }
        if g > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dg = s * (low.inverse_marginal(s) - high.inverse_marginal(s));
        let newton = x - g / dg;
        x = if newton > lo && newton < hi && dg.is_finite() {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    let slope = x.exp();
    let (a1, a2) = (low.inverse_marginal(slope), high.inverse_marginal(slope));
    if !(a1 < b && b < a2) {
        return Err(PsaharaError::Tangency { left: 0, right: 1 });
    }
    Ok(Tangency { a1, a2, slope })
}

/// Per-side closed-form pieces at one state.
#[derive(Clone, Copy, Debug, Default)]
struct SideTerms {
    x_b: f64,
    x_r: f64,
    x_rbar: f64,
    b: f64,
    /// `(gamma'/(y xi))^{1/alpha} phi(g1)` and `beta'^2 (gamma'/(y xi))^{-1/alpha} phi(g2)` with prefactors.
    up: f64,
    down: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncentiveTerms {
    pub pi1: Vec<f64>,
    pub pi2: Vec<f64>,
    pub pi3: Vec<f64>,
    pub total: Vec<f64>,
    pub wealth: f64,
}

/// Direct-route policy for the incentive problem.
#[derive(Clone, Debug)]
pub struct IncentivePolicy {
    params: IncentiveParams,
    market: MarketModel,
    x0: f64,
    y_star: f64,
    tangency: Tangency,
}

struct State {
    low: SideTerms,
    high: SideTerms,
    /// `-xi dX/dxi` split into the three portfolio terms.
    s1: f64,
    s2: f64,
    s3: f64,
}

impl IncentivePolicy {
    pub fn solve(params: IncentiveParams, market: MarketModel, x0: f64) -> Result<Self> {
        let tangency = tangency(&params)?;
        let mut policy = IncentivePolicy {
            params,
            market,
            x0,
            y_star: 1.0,
            tangency,
        };
        let ka = KernelArgs::at(&policy.market, 0.0)?;
        let f = |ly: f64| policy.state(&ka, ly).wealth() - x0;
        // wealth is decreasing in log y; expand a bracket then bisect
        let (mut lo, mut hi) = (-1.0, 1.0);
        let mut i = 0;
        while f(lo) < 0.0 || f(hi) > 0.0 {
            if f(lo) < 0.0 {
                lo -= 2.0 * (i as f64 + 1.0);
            }
            if f(hi) > 0.0 {
                hi += 2.0 * (i as f64 + 1.0);
            }
            i += 1;
            if i > 60 {
                return Err(PsaharaError::Bracket(format!(
                    "x0 = {x0} outside the attainable range"
                )));
            }
        }
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        policy.y_star = (0.5 * (lo + hi)).exp();
        Ok(policy)
    }

    pub fn params(&self) -> &IncentiveParams {
        &self.params
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

    pub fn tangency_points(&self) -> Tangency {
        self.tangency
    }

    fn state(&self, ka: &KernelArgs, log_y: f64) -> State {
        let p = &self.params;
        let (low, high) = sides(p);
        let alpha = p.alpha;
        let inv = 1.0 / alpha;
        let sq = ka.sqrt_theta;
        let disc = (-ka.rate).exp();
        let ls = self.tangency.slope.ln() - log_y;
        let g0 = ka.g0(ls);
        let g1 = ka.g1(ls, alpha);
        let g2 = ka.g2(ls, alpha);
        let e1 = (-1.0 + inv) * (ka.rate + 0.5 * ka.theta_sq * inv);
        let e2 = (-1.0 - inv) * (ka.rate - 0.5 * ka.theta_sq * inv);
        // the low side sees y xi_T above the slope (upper tail of g), the high side below
        let side = |s: &Side, sign: f64| -> SideTerms {
            let (beta, d, gamma) = s.scaled();
            let l = gamma.ln() - log_y;
            let lp1 = log_cdf(sign * g1);
            let lp2 = log_cdf(sign * g2);
            let x_b = disc * d * log_cdf(sign * g0).exp();
            let x_r = 0.5 * exp_clamped(e1 + l * inv + lp1);
            let (x_rbar, b, down) = if beta > 0.0 {
                let b2 = beta * beta;
                let x_rbar = -0.5 * b2 * exp_clamped(e2 - l * inv + lp2);
                let b = exp_clamped(
                    2.0 * beta.ln() - 2.0 * ka.rate + ka.theta_sq * inv * inv + lp1 + lp2,
                );
                (x_rbar, b, b2 * exp_clamped(e2 - l * inv) * pdf(g2))
            } else {
                (0.0, 0.0, 0.0)
            };
            let up = exp_clamped(e1 + l * inv) * pdf(g1);
            SideTerms {
                x_b,
                x_r,
                x_rbar,
                b,
                up,
                down,
            }
        };
        let lo = side(&low, 1.0);
        let hi = side(&high, -1.0);
        let s1 = inv
            * ((lo.x_r + lo.x_rbar).hypot(lo.b.sqrt()) + (hi.x_r + hi.x_rbar).hypot(hi.b.sqrt()));
        let s2 = -0.5 / sq * ((lo.up - hi.up) - (lo.down - hi.down));
        let (_, d_lo, _) = low.scaled();
        let (_, d_hi, _) = high.scaled();
        let s3 = -disc / sq * (d_lo - d_hi) * pdf(g0);
        State {
            low: lo,
            high: hi,
            s1,
            s2,
            s3,
        }
    }

    fn at(&self, t: f64, xi: f64) -> Result<State> {
        if !(xi > 0.0) || !xi.is_finite() {
            return Err(PsaharaError::Domain(format!(
                "xi = {xi} must be positive and finite"
            )));
        }
        let ka = KernelArgs::at(&self.market, t)?;
        if !(ka.theta_sq > 0.0) {
            return Err(PsaharaError::Market(
                "zero market price of risk on [t, T]".into(),
            ));
        }
        Ok(self.state(&ka, self.y_star.ln() + xi.ln()))
    }

    /// Terminal wealth; the tie `y xi = slope` resolves to `a1`.
    pub fn terminal_wealth(&self, xi: f64) -> f64 {
        let (low, high) = sides(&self.params);
        let yx = self.y_star * xi;
        let s = self.tangency.slope;
        if yx > s {
            low.inverse_marginal(yx).min(self.tangency.a1)
        } else if yx < s {
            high.inverse_marginal(yx).max(self.tangency.a2)
        } else {
            self.tangency.a1
        }
    }

    pub fn wealth(&self, t: f64, xi: f64) -> Result<f64> {
        Ok(self.at(t, xi)?.wealth())
    }

    pub fn portfolio(&self, t: f64, xi: f64) -> Result<IncentiveTerms> {
        let st = self.at(t, xi)?;
        let c = self.market.premium(t);
        let term = |s: f64| -> Vec<f64> { c.iter().map(|v| v * s).collect() };
        let (pi1, pi2, pi3) = (term(st.s1), term(st.s2), term(st.s3));
        let total = (0..c.len()).map(|i| pi1[i] + pi2[i] + pi3[i]).collect();
        Ok(IncentiveTerms {
            pi1,
            pi2,
            pi3,
            total,
            wealth: st.wealth(),
        })
    }
}

impl super::Strategy for IncentivePolicy {
    fn market(&self) -> &MarketModel {
        &self.market
    }

    fn x0(&self) -> f64 {
        self.x0
    }

    fn terminal_wealth(&self, xi: f64) -> f64 {
        self.terminal_wealth(xi)
    }

    fn state(&self, t: f64, xi: f64) -> Result<(f64, nalgebra::DVector<f64>)> {
        let st = self.at(t, xi)?;
        Ok((
            st.wealth(),
            self.market.premium(t) * (st.s1 + st.s2 + st.s3),
        ))
    }
}

impl State {
    fn wealth(&self) -> f64 {
        let side = |s: &SideTerms| s.x_b + s.x_r + s.x_rbar;
        side(&self.low) + side(&self.high)
    }
}

/// Direct incentive portfolio at `(t, xi_t)`.
pub fn incentive_portfolio(
    t: f64,
    xi: f64,
    params: &IncentiveParams,
    market: &MarketModel,
    x0: f64,
) -> Result<Vec<f64>> {
    let policy = IncentivePolicy::solve(*params, market.clone(), x0)?;
    Ok(policy.portfolio(t, xi)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tangent_line_touches_both_sides() {
        let p = IncentiveParams::standard(0.05f64.exp());
        let tg = tangency(&p).unwrap();
        let (low, high) = sides(&p);
        assert!((low.marginal(tg.a1) - tg.slope).abs() < 1e-12 * tg.slope);
        assert!((high.marginal(tg.a2) - tg.slope).abs() < 1e-12 * tg.slope);
        let chord = (high.value(tg.a2) - low.value(tg.a1)) / (tg.a2 - tg.a1);
        assert!((chord - tg.slope).abs() < 1e-10 * tg.slope);
    }

    #[test]
    fn zero_d_leaves_single_benchmark_term() {
        let p = IncentiveParams::standard(1.0);
        let (low, _) = sides(&p);
        assert_eq!(low.scaled().1, 0.0);
    }
}
