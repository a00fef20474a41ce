//! SAHARA primitives and the piecewise SAHARA utility container.
//!
//! The base function uses the normalisation `c1 = 0`, `c2 = 1`; scale and
//! shift are carried by each piece's `gamma` and `u`.

use crate::error::{PsaharaError, Result};
use serde::{Deserialize, Serialize};

/// Half-width of the band around `alpha = 1` that uses the log branch.
pub const LOG_BRANCH_TOL: f64 = 1e-9;
/// Two breakpoints closer than this (relative) are merged.
pub const BREAKPOINT_TOL: f64 = 1e-12;
/// Continuity tolerance at breakpoints (relative to the value scale).
pub const CONTINUITY_TOL: f64 = 1e-10;

// ---- Single piece ----

/// One SAHARA segment `gamma * U(x; alpha, beta, d) + u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaharaPiece {
    pub alpha: f64,
    pub beta: f64,
    pub d: f64,
    pub gamma: f64,
    #[serde(default)]
    pub u: f64,
    #[serde(default)]
    pub hara_limit: bool,
}

impl SaharaPiece {
    pub fn new(alpha: f64, beta: f64, d: f64, gamma: f64, u: f64) -> Self {
        SaharaPiece {
            alpha,
            beta,
            d,
            gamma,
            u,
            hara_limit: false,
        }
    }

    /// HARA limit piece (`beta = 0`), defined on `(d, inf)` only.
    pub fn hara(alpha: f64, d: f64, gamma: f64, u: f64) -> Self {
        SaharaPiece {
            alpha,
            beta: 0.0,
            d,
            gamma,
            u,
            hara_limit: true,
        }
    }

    /// Linear piece with constant marginal `slope`.
    pub fn linear(slope: f64, u: f64) -> Self {
        SaharaPiece {
            alpha: 0.0,
            beta: 1.0,
            d: 0.0,
            gamma: slope,
            u,
            hara_limit: false,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.alpha == 0.0
    }

    pub fn check(&self) -> Result<()> {
        let finite = [self.alpha, self.beta, self.d, self.gamma, self.u]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(PsaharaError::InvalidUtility(
                "non-finite piece parameter".into(),
            ));
        }
        if self.alpha < 0.0 {
            return Err(PsaharaError::InvalidUtility(format!(
                "alpha = {} < 0",
                self.alpha
            )));
        }
        if self.gamma <= 0.0 {
            return Err(PsaharaError::InvalidUtility(format!(
                "gamma = {} <= 0",
                self.gamma
            )));
        }
        if self.hara_limit {
            if self.beta != 0.0 {
                return Err(PsaharaError::InvalidUtility(
                    "hara_limit piece needs beta = 0".into(),
                ));
            }
        } else if self.beta <= 0.0 {
            return Err(PsaharaError::InvalidUtility(format!(
                "beta = {} must be positive unless hara_limit is set",
                self.beta
            )));
        }
        Ok(())
    }

    fn check_point(&self, x: f64) -> Result<()> {
        if self.hara_limit && !(x > self.d) {
            return Err(PsaharaError::Domain(format!(
                "x = {x} outside (d, inf) with d = {}",
                self.d
            )));
        }
        Ok(())
    }

    /// `log((x-d) + sqrt(beta^2 + (x-d)^2))`, cancellation-free for x < d.
    pub fn log_kernel(&self, x: f64) -> f64 {
        let y = x - self.d;
        let s = self.beta.hypot(y);
        if y >= 0.0 {
            (y + s).ln()
        } else {
            (self.beta * self.beta / (s - y)).ln()
        }
    }

    /// Base function `U(x; alpha, beta, d)` without `gamma` and `u`.
    pub fn base_value(&self, x: f64) -> f64 {
        let a = self.alpha;
        let y = x - self.d;
        if a == 0.0 {
            return y;
        }
        let s = self.beta.hypot(y);
        let lk = self.log_kernel(x);
        if (a - 1.0).abs() < LOG_BRANCH_TOL {
            // y / (y + s) written without cancellation
            let ratio = if y >= 0.0 {
                y / (y + s)
            } else {
                y * (s - y) / (self.beta * self.beta)
            };
            0.5 * lk + 0.5 * ratio
        } else {
            -(-a * lk).exp() * (y + a * s) / (a * a - 1.0)
        }
    }

    /// `gamma * U + u`.
    pub fn value(&self, x: f64) -> f64 {
        self.gamma * self.base_value(x) + self.u
    }

    pub fn marginal(&self, x: f64) -> f64 {
        if self.alpha == 0.0 {
            return self.gamma;
        }
        self.gamma * (-self.alpha * self.log_kernel(x)).exp()
    }

    pub fn log_marginal(&self, x: f64) -> f64 {
        if self.alpha == 0.0 {
            return self.gamma.ln();
        }
        self.gamma.ln() - self.alpha * self.log_kernel(x)
    }

    /// Second derivative, `-ara * marginal`.
    pub fn second_derivative(&self, x: f64) -> f64 {
        -self.ara(x) * self.marginal(x)
    }

    pub fn ara(&self, x: f64) -> f64 {
        self.alpha / self.beta.hypot(x - self.d)
    }

    /// Inverse of the marginal given `log(gamma / y)`; requires `alpha > 0`.
    pub fn inverse_marginal_log(&self, log_ratio: f64) -> f64 {
        let e = log_ratio / self.alpha;
        self.d + 0.5 * (e.exp() - self.beta * self.beta * (-e).exp())
    }

    pub fn inverse_marginal(&self, y: f64) -> f64 {
        self.inverse_marginal_log(self.gamma.ln() - y.ln())
    }
}

/// Value of a piece at `x`.
pub fn sahara_value(x: f64, p: &SaharaPiece) -> Result<f64> {
    p.check()?;
    p.check_point(x)?;
    Ok(p.value(x))
}

/// Marginal utility of a piece at `x`.
pub fn sahara_marginal(x: f64, p: &SaharaPiece) -> Result<f64> {
    p.check()?;
    p.check_point(x)?;
    Ok(p.marginal(x))
}

/// Absolute risk aversion of a piece at `x`.
pub fn sahara_ara(x: f64, p: &SaharaPiece) -> Result<f64> {
    p.check()?;
    p.check_point(x)?;
    Ok(p.ara(x))
}

/// Wealth level where the marginal utility of `p` equals `y`.
pub fn sahara_inverse_marginal(y: f64, p: &SaharaPiece) -> Result<f64> {
    p.check()?;
    if !(y > 0.0) || !y.is_finite() {
        return Err(PsaharaError::Domain(format!(
            "marginal level y = {y} must be positive"
        )));
    }
    if p.alpha == 0.0 {
        return Err(PsaharaError::Domain(
            "linear piece has no single-valued inverse marginal".into(),
        ));
    }
    Ok(p.inverse_marginal(y))
}

// ---- Piecewise container ----

/// Serialised form shared by JSON readers and writers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UtilityData {
    pub breakpoints: Vec<f64>,
    pub pieces: Vec<SaharaPiece>,
}

/// Piecewise SAHARA utility on the partition `a_1 < ... < a_n`.
///
/// Breakpoint `a_k` (1-based, as in the slope accessors) is stored at
/// `breakpoints[k - 1]`; piece `k` lives on `[a_k, a_{k+1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UtilityData", into = "UtilityData")]
pub struct PiecewiseUtility {
    breakpoints: Vec<f64>,
    pieces: Vec<SaharaPiece>,
    left_slopes: Vec<f64>,
    right_slopes: Vec<f64>,
}

impl TryFrom<UtilityData> for PiecewiseUtility {
    type Error = PsaharaError;
    fn try_from(d: UtilityData) -> Result<Self> {
        PiecewiseUtility::new(d.breakpoints, d.pieces)
    }
}

impl From<PiecewiseUtility> for UtilityData {
    fn from(u: PiecewiseUtility) -> Self {
        UtilityData {
            breakpoints: u.breakpoints,
            pieces: u.pieces,
        }
    }
}

impl PiecewiseUtility {
    /// Builds the container after structural checks; continuity is
    /// reported by [`validate`] rather than enforced here.
    pub fn new(breakpoints: Vec<f64>, pieces: Vec<SaharaPiece>) -> Result<Self> {
        if pieces.len() != breakpoints.len() + 1 {
            return Err(PsaharaError::InvalidUtility(format!(
                "{} breakpoints need {} pieces, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                pieces.len()
            )));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(PsaharaError::InvalidUtility("non-finite breakpoint".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PsaharaError::InvalidUtility(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        for (k, p) in pieces.iter().enumerate() {
            p.check()?;
            if p.hara_limit && (k == 0 || breakpoints[k - 1] < p.d) {
                return Err(PsaharaError::InvalidUtility(format!(
                    "hara_limit piece {k} must start at or above its threshold d = {}",
                    p.d
                )));
            }
        }
        let n = breakpoints.len();
        let mut left_slopes = Vec::with_capacity(n);
        let mut right_slopes = Vec::with_capacity(n);
        for (k, &a) in breakpoints.iter().enumerate() {
            left_slopes.push(pieces[k].marginal(a));
            right_slopes.push(pieces[k + 1].marginal(a));
        }
        Ok(PiecewiseUtility {
            breakpoints,
            pieces,
            left_slopes,
            right_slopes,
        })
    }

    pub fn single(piece: SaharaPiece) -> Result<Self> {
        Self::new(Vec::new(), vec![piece])
    }

    /// Number of breakpoints `n`.
    pub fn n(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[SaharaPiece] {
        &self.pieces
    }

    /// Breakpoint `a_k`, `k` in `1..=n`.
    pub fn a(&self, k: usize) -> f64 {
        self.breakpoints[k - 1]
    }

    /// Left slope `gamma_k^-` for `k` in `1..=n+1`; `gamma_{n+1}^- = 0`.
    pub fn left_slope(&self, k: usize) -> f64 {
        if k == self.n() + 1 {
            0.0
        } else {
            self.left_slopes[k - 1]
        }
    }

    /// Right slope `gamma_k^+` for `k` in `0..=n`; `gamma_0^+ = inf`.
    pub fn right_slope(&self, k: usize) -> f64 {
        if k == 0 {
            f64::INFINITY
        } else {
            self.right_slopes[k - 1]
        }
    }

    /// Index of the piece containing `x`; a breakpoint belongs to the right piece.
    pub fn locate(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&a| a <= x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.pieces[self.locate(x)].value(x)
    }

    /// Right-hand marginal utility.
    pub fn marginal(&self, x: f64) -> f64 {
        self.pieces[self.locate(x)].marginal(x)
    }

    /// `|right value - left value|` at each breakpoint.
    pub fn continuity_residuals(&self) -> Vec<f64> {
        self.breakpoints
            .iter()
            .enumerate()
            .map(|(i, &a)| (self.pieces[i + 1].value(a) - self.pieces[i].value(a)).abs())
            .collect()
    }

    pub fn is_continuous(&self) -> bool {
        self.breakpoints.iter().enumerate().all(|(i, &a)| {
            let l = self.pieces[i].value(a);
            let r = self.pieces[i + 1].value(a);
            (r - l).abs() <= CONTINUITY_TOL * l.abs().max(r.abs()).max(1.0)
        })
    }

    /// Nonincreasing marginal chain `gamma_1^- >= gamma_1^+ >= ... >= 0`,
    /// with relative tolerance `tol`.
    pub fn slope_chain_nonincreasing(&self, tol: f64) -> Option<usize> {
        let mut prev = f64::INFINITY;
        for k in 1..=self.n() {
            let gm = self.left_slope(k);
            let gp = self.right_slope(k);
            if gm > prev * (1.0 + tol) || gp > gm * (1.0 + tol) {
                return Some(k);
            }
            prev = gp;
        }
        None
    }

    pub fn to_raw(&self) -> RawUtility {
        RawUtility {
            breakpoints: self.breakpoints.clone(),
            segments: self.pieces.iter().map(|p| RawSegment::Sahara(*p)).collect(),
        }
    }
}

/// Evaluates a valid piecewise utility.
pub fn psahara_eval(u: &PiecewiseUtility, x: f64) -> Result<f64> {
    if !u.is_continuous() {
        return Err(PsaharaError::InvalidUtility(
            "utility is discontinuous at a breakpoint".into(),
        ));
    }
    let p = &u.pieces[u.locate(x)];
    p.check_point(x)?;
    Ok(p.value(x))
}

// ---- Raw specifications ----

/// `scale * (anchor - x)^exponent + shift` on `x < anchor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSegment {
    pub scale: f64,
    pub anchor: f64,
    pub exponent: f64,
    #[serde(default)]
    pub shift: f64,
}

impl PowerSegment {
    pub fn value(&self, x: f64) -> f64 {
        self.scale * (self.anchor - x).powf(self.exponent) + self.shift
    }

    pub fn derivative(&self, x: f64) -> f64 {
        -self.scale * self.exponent * (self.anchor - x).powf(self.exponent - 1.0)
    }

    pub fn is_concave(&self) -> bool {
        self.scale * self.exponent * (self.exponent - 1.0) <= 0.0
    }
}

/// One segment of a raw (possibly discontinuous, non-monotone) specification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawSegment {
    Sahara(SaharaPiece),
    Power(PowerSegment),
    Constant { value: f64 },
}

impl RawSegment {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            RawSegment::Sahara(p) => p.value(x),
            RawSegment::Power(p) => p.value(x),
            RawSegment::Constant { value } => *value,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            RawSegment::Sahara(p) => p.marginal(x),
            RawSegment::Power(p) => p.derivative(x),
            RawSegment::Constant { .. } => 0.0,
        }
    }

    pub fn is_concave(&self) -> bool {
        match self {
            RawSegment::Sahara(_) | RawSegment::Constant { .. } => true,
            RawSegment::Power(p) => p.is_concave(),
        }
    }
}

/// Raw piecewise specification accepted by the envelope builder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawUtility {
    pub breakpoints: Vec<f64>,
    pub segments: Vec<RawSegment>,
}

impl RawUtility {
    pub fn check(&self) -> Result<()> {
        if self.segments.len() != self.breakpoints.len() + 1 {
            return Err(PsaharaError::InvalidUtility(format!(
                "{} breakpoints need {} segments, got {}",
                self.breakpoints.len(),
                self.breakpoints.len() + 1,
                self.segments.len()
            )));
        }
        if self.breakpoints.iter().any(|b| !b.is_finite())
            || self.breakpoints.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(PsaharaError::InvalidUtility(
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        for (k, s) in self.segments.iter().enumerate() {
            let (lo, hi) = self.interval(k);
            match s {
                RawSegment::Sahara(p) => {
                    p.check()?;
                    if p.hara_limit && !(lo >= p.d) {
                        return Err(PsaharaError::InvalidUtility(format!(
                            "hara_limit segment {k} extends below its threshold"
                        )));
                    }
                }
                RawSegment::Power(p) => {
                    if !(hi <= p.anchor) {
                        return Err(PsaharaError::InvalidUtility(format!(
                            "power segment {k} extends past its anchor {}",
                            p.anchor
                        )));
                    }
                    if !lo.is_finite() && p.exponent > 1.0 {
                        return Err(PsaharaError::InvalidUtility(format!(
                            "power segment {k} is unbounded"
                        )));
                    }
                }
                RawSegment::Constant { value } => {
                    if !value.is_finite() {
                        return Err(PsaharaError::InvalidUtility("non-finite constant".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Closed interval `[lo, hi]` of segment `k` (infinite at the ends).
    pub fn interval(&self, k: usize) -> (f64, f64) {
        let lo = if k == 0 {
            f64::NEG_INFINITY
        } else {
            self.breakpoints[k - 1]
        };
        let hi = if k == self.breakpoints.len() {
            f64::INFINITY
        } else {
            self.breakpoints[k]
        };
        (lo, hi)
    }

    pub fn locate(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&a| a <= x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.segments[self.locate(x)].value(x)
    }
}

// ---- Common view for validation ----

/// Read-only view shared by the raw and the piecewise SAHARA representations.
pub trait UtilityCurve {
    fn knots(&self) -> &[f64];
    fn value_at(&self, x: f64) -> f64;
    /// Closure value of the segment left of breakpoint `i` (0-based).
    fn value_left(&self, i: usize) -> f64;
    fn value_right(&self, i: usize) -> f64;
    fn slope_left(&self, i: usize) -> f64;
    fn slope_right(&self, i: usize) -> f64;
    /// Whether segment `k` is concave on its own interval.
    fn segment_concave(&self, k: usize) -> bool;
}

impl UtilityCurve for PiecewiseUtility {
    fn knots(&self) -> &[f64] {
        &self.breakpoints
    }
    fn value_at(&self, x: f64) -> f64 {
        self.eval(x)
    }
    fn value_left(&self, i: usize) -> f64 {
        self.pieces[i].value(self.breakpoints[i])
    }
    fn value_right(&self, i: usize) -> f64 {
        self.pieces[i + 1].value(self.breakpoints[i])
    }
    fn slope_left(&self, i: usize) -> f64 {
        self.left_slopes[i]
    }
    fn slope_right(&self, i: usize) -> f64 {
        self.right_slopes[i]
    }
    fn segment_concave(&self, _k: usize) -> bool {
        true
    }
}

impl UtilityCurve for RawUtility {
    fn knots(&self) -> &[f64] {
        &self.breakpoints
    }
    fn value_at(&self, x: f64) -> f64 {
        self.eval(x)
    }
    fn value_left(&self, i: usize) -> f64 {
        self.segments[i].value(self.breakpoints[i])
    }
    fn value_right(&self, i: usize) -> f64 {
        self.segments[i + 1].value(self.breakpoints[i])
    }
    fn slope_left(&self, i: usize) -> f64 {
        self.segments[i].derivative(self.breakpoints[i])
    }
    fn slope_right(&self, i: usize) -> f64 {
        self.segments[i + 1].derivative(self.breakpoints[i])
    }
    fn segment_concave(&self, k: usize) -> bool {
        self.segments[k].is_concave()
    }
}

// ---- Validation report ----

/// Grid used for the monotonicity scan.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    /// Covers `[-10, 10]` and every breakpoint with a margin of 5.
    pub fn around(knots: &[f64]) -> Self {
        let lo = knots.first().map_or(-10.0, |&a| (a - 5.0).min(-10.0));
        let hi = knots.last().map_or(10.0, |&a| (a + 5.0).max(10.0));
        GridSpec {
            lo,
            hi,
            points: 20_001,
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let n = self.points.max(2);
        let h = (self.hi - self.lo) / (n - 1) as f64;
        (0..n).map(|i| self.lo + h * i as f64).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BreakpointCheck {
    pub index: usize,
    pub x: f64,
    pub left_value: f64,
    pub right_value: f64,
    pub residual: f64,
    pub continuous: bool,
    pub left_slope: f64,
    pub right_slope: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub x_left: f64,
    pub x_right: f64,
    pub drop: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub breakpoints: Vec<BreakpointCheck>,
    pub discontinuities: Vec<f64>,
    pub monotonicity_violations: Vec<MonotonicityViolation>,
    /// Breakpoints where a one-sided marginal is not positive.
    pub nonpositive_slopes: Vec<f64>,
    /// Whether `gamma_1^- >= gamma_1^+ >= ... ` holds.
    pub slope_chain_nonincreasing: bool,
    pub clean: bool,
}

/// Continuity, monotonicity and slope-chain report for a utility.
pub fn validate<U: UtilityCurve + ?Sized>(u: &U, grid: Option<GridSpec>) -> ValidationReport {
    let knots = u.knots();
    let mut checks = Vec::with_capacity(knots.len());
    let mut discontinuities = Vec::new();
    let mut nonpositive = Vec::new();
    let mut chain_ok = true;
    let mut prev_right = f64::INFINITY;
    for (i, &a) in knots.iter().enumerate() {
        let l = u.value_left(i);
        let r = u.value_right(i);
        let residual = if l == r { 0.0 } else { (r - l).abs() };
        let continuous = residual <= CONTINUITY_TOL * l.abs().max(r.abs()).max(1.0);
        if !continuous {
            discontinuities.push(a);
        }
        let gl = u.slope_left(i);
        let gr = u.slope_right(i);
        if !(gl > 0.0) || !(gr > 0.0) {
            nonpositive.push(a);
        }
        if gl > prev_right * (1.0 + 1e-9) || gr > gl * (1.0 + 1e-9) || !continuous {
            chain_ok = false;
        }
        prev_right = gr;
        checks.push(BreakpointCheck {
            index: i + 1,
            x: a,
            left_value: l,
            right_value: r,
            residual,
            continuous,
            left_slope: gl,
            right_slope: gr,
        });
    }
    let grid = grid.unwrap_or_else(|| GridSpec::around(knots));
    let xs = grid.nodes();
    let mut violations = Vec::new();
    let mut prev = u.value_at(xs[0]);
    for w in xs.windows(2) {
        let v = u.value_at(w[1]);
        if !(v > prev) {
            let drop = prev - v;
            if !(drop <= 0.0) {
                violations.push(MonotonicityViolation {
                    x_left: w[0],
                    x_right: w[1],
                    drop,
                });
            }
        }
        prev = v;
    }
    let clean = discontinuities.is_empty() && violations.is_empty() && nonpositive.is_empty();
    ValidationReport {
        breakpoints: checks,
        discontinuities,
        monotonicity_violations: violations,
        nonpositive_slopes: nonpositive,
        slope_chain_nonincreasing: chain_ok,
        clean,
    }
}

// ---- Contracts ----

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractSegment {
    /// Left end of the segment; `None` means minus infinity.
    #[serde(default)]
    pub from: Option<f64>,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ContractData {
    segments: Vec<ContractSegment>,
}

/// Increasing continuous piecewise-linear map `h(x) = A x + B` per segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ContractData", into = "ContractData")]
pub struct LinearContract {
    segments: Vec<ContractSegment>,
}

impl TryFrom<ContractData> for LinearContract {
    type Error = PsaharaError;
    fn try_from(d: ContractData) -> Result<Self> {
        LinearContract::new(d.segments)
    }
}

impl From<LinearContract> for ContractData {
    fn from(c: LinearContract) -> Self {
        ContractData {
            segments: c.segments,
        }
    }
}

impl LinearContract {
    pub fn new(mut segments: Vec<ContractSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(PsaharaError::InvalidContract("no segments".into()));
        }
        if let Some(f) = segments[0].from {
            if f.is_finite() {
                return Err(PsaharaError::InvalidContract(
                    "first segment must start at -inf".into(),
                ));
            }
            segments[0].from = None;
        }
        for (i, s) in segments.iter().enumerate() {
            if !(s.slope > 0.0) || !s.slope.is_finite() || !s.intercept.is_finite() {
                return Err(PsaharaError::InvalidContract(format!(
                    "segment {i} is not increasing"
                )));
            }
            if i > 0 {
                let x = s.from.filter(|v| v.is_finite()).ok_or_else(|| {
                    PsaharaError::InvalidContract(format!("segment {i} needs a finite start"))
                })?;
                if let Some(prev_from) = segments[i - 1].from {
                    if !(x > prev_from) {
                        return Err(PsaharaError::InvalidContract(
                            "segment starts must increase".into(),
                        ));
                    }
                }
                let p = &segments[i - 1];
                let l = p.slope * x + p.intercept;
                let r = s.slope * x + s.intercept;
                if (l - r).abs() > 1e-12 * l.abs().max(r.abs()).max(1.0) {
                    return Err(PsaharaError::InvalidContract(format!(
                        "discontinuous at x = {x}"
                    )));
                }
            }
        }
        Ok(LinearContract { segments })
    }

    pub fn identity() -> Self {
        LinearContract {
            segments: vec![ContractSegment {
                from: None,
                slope: 1.0,
                intercept: 0.0,
            }],
        }
    }

    /// `w (x - benchmark)^+ + v x`.
    pub fn incentive(w: f64, v: f64, benchmark: f64) -> Result<Self> {
        if !(w >= 0.0) || !(v > 0.0) {
            return Err(PsaharaError::InvalidContract(format!(
                "need w >= 0 and v > 0, got w = {w}, v = {v}"
            )));
        }
        if w == 0.0 {
            return Ok(LinearContract {
                segments: vec![ContractSegment {
                    from: None,
                    slope: v,
                    intercept: 0.0,
                }],
            });
        }
        Self::new(vec![
            ContractSegment {
                from: None,
                slope: v,
                intercept: 0.0,
            },
            ContractSegment {
                from: Some(benchmark),
                slope: w + v,
                intercept: -w * benchmark,
            },
        ])
    }

    pub fn segments(&self) -> &[ContractSegment] {
        &self.segments
    }

    fn segment_index(&self, x: f64) -> usize {
        self.segments[1..].partition_point(|s| s.from.unwrap() <= x)
    }

    pub fn apply(&self, x: f64) -> f64 {
        let s = &self.segments[self.segment_index(x)];
        s.slope * x + s.intercept
    }

    /// Inverse map (the contract is a bijection of the real line).
    pub fn pullback(&self, y: f64) -> f64 {
        let k = self.segments[1..].partition_point(|s| {
            let x = s.from.unwrap();
            s.slope * x + s.intercept <= y
        });
        let s = &self.segments[k];
        (y - s.intercept) / s.slope
    }
}

fn same_point(a: f64, b: f64) -> bool {
    (a - b).abs() <= BREAKPOINT_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Piecewise SAHARA representation of `U(h(x))`.
pub fn compose_with_contract(u: &PiecewiseUtility, h: &LinearContract) -> Result<PiecewiseUtility> {
    let mut knots: Vec<f64> = h.segments()[1..].iter().map(|s| s.from.unwrap()).collect();
    knots.extend(u.breakpoints().iter().map(|&a| h.pullback(a)));
    knots.sort_by(|a, b| a.total_cmp(b));
    let mut merged: Vec<f64> = Vec::with_capacity(knots.len());
    for x in knots {
        match merged.last() {
            Some(&last) if same_point(last, x) => {}
            _ => merged.push(x),
        }
    }
    let mut pieces: Vec<SaharaPiece> = Vec::with_capacity(merged.len() + 1);
    for k in 0..=merged.len() {
        let probe = match (k, merged.len()) {
            (_, 0) => 0.0,
            (0, _) => merged[0] - 1.0,
            (k, m) if k == m => merged[m - 1] + 1.0,
            (k, _) => 0.5 * (merged[k - 1] + merged[k]),
        };
        let seg = &h.segments()[h.segment_index(probe)];
        let (a, b) = (seg.slope, seg.intercept);
        let src = &u.pieces()[u.locate(a * probe + b)];
        let mut p = SaharaPiece {
            alpha: src.alpha,
            beta: src.beta / a,
            d: (src.d - b) / a,
            gamma: a.powf(1.0 - src.alpha) * src.gamma,
            u: src.u,
            hara_limit: src.hara_limit,
        };
        if src.alpha == 0.0 {
            // linear pieces are re-anchored at zero threshold
            p.gamma = src.gamma * a;
            p.d = 0.0;
            p.beta = 1.0;
            p.u = src.gamma * (b - src.d) + src.u;
        } else if (src.alpha - 1.0).abs() < LOG_BRANCH_TOL {
            p.u += 0.5 * src.gamma * a.ln();
        }
        if k > 0 {
            let x = merged[k - 1];
            let prev = pieces[k - 1].value(x);
            p.u += prev - p.value(x);
        }
        pieces.push(p);
    }
    PiecewiseUtility::new(merged, pieces)
}
