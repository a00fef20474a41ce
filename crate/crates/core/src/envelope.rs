//! Concave envelope of a piecewise specification.
//!
//! The envelope's conjugate is the pointwise maximum of the segment
//! conjugates `c_k(s) = sup_{x in I_k} f_k(x) - s x`. Sweeping the slope
//! `s` from `+inf` down to `0` visits the segments that touch the
//! envelope in left-to-right order; each hand-over is a bridge.

use crate::error::{PsaharaError, Result};
use crate::utility::{
    PiecewiseUtility, RawSegment, RawUtility, SaharaPiece, UtilityCurve, CONTINUITY_TOL,
};
use serde::{Deserialize, Serialize};

/// Relative tolerance under which two switch slopes count as a tie.
const TIE_TOL: f64 = 1e-12;
/// Relative length under which an arc or bridge is treated as a point.
const LENGTH_TOL: f64 = 1e-11;
/// Relative tolerance for kink detection.
const KINK_TOL: f64 = 1e-9;
/// Relative distance under which a support point is snapped to an interval end.
const SNAP_TOL: f64 = 1e-7;

// ---- Types ----

/// Linear segment of the envelope that lies strictly above the original.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bridge {
    pub left: f64,
    pub right: f64,
    pub slope: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeResult {
    pub envelope: PiecewiseUtility,
    pub bridges: Vec<Bridge>,
    pub kinks: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcavityViolation {
    /// 1-based breakpoint index, or 0 when a segment itself is convex.
    pub index: usize,
    pub x: f64,
    pub kind: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcavityCheck {
    pub concave: bool,
    pub violation: Option<ConcavityViolation>,
}

// ---- Segment conjugates ----

struct Seg<'a> {
    seg: &'a RawSegment,
    lo: f64,
    hi: f64,
}

impl Seg<'_> {
    /// Maximiser of `f(x) - s x` over the closed interval.
    fn support(&self, s: f64) -> f64 {
        let x = match self.seg {
            RawSegment::Sahara(p) if p.alpha == 0.0 => {
                if s >= p.gamma {
                    self.lo
                } else {
                    self.hi
                }
            }
            RawSegment::Sahara(p) => p.inverse_marginal_log(p.gamma.ln() - s.ln()),
            RawSegment::Power(p) => {
                let k = -p.scale * p.exponent;
                if k <= 0.0 {
                    self.lo
                } else {
                    p.anchor - (s / k).powf(1.0 / (p.exponent - 1.0))
                }
            }
            RawSegment::Constant { .. } => self.lo,
        };
        x.clamp(self.lo, self.hi)
    }

    fn value(&self, x: f64) -> f64 {
        self.seg.value(x)
    }
}

fn same_x(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// `c_k(s) - c_j(s)`, with coincident support points compared by value only.
fn conj_gap(k: &Seg, j: &Seg, s: f64) -> f64 {
    let xk = k.support(s);
    let xj = j.support(s);
    let fk = k.value(xk);
    let fj = j.value(xj);
    if same_x(xk, xj) {
        let gap = fk - fj;
        if gap.abs() <= CONTINUITY_TOL * fk.abs().max(fj.abs()).max(1.0) {
            return 0.0;
        }
        return gap;
    }
    (fk - s * xk) - (fj - s * xj)
}

/// Largest slope `s <= s_cur` at which segment `j` catches up with `k`.
fn switch_slope(segs: &[Seg], k: usize, j: usize, s_cur: f64) -> Result<Option<f64>> {
    let gap = |s: f64| -> Result<f64> {
        let g = conj_gap(&segs[k], &segs[j], s);
        if g.is_nan() {
            Err(PsaharaError::Tangency { left: k, right: j })
        } else {
            Ok(g)
        }
    };
    let mut hi;
    if s_cur.is_finite() {
        if gap(s_cur)? <= 0.0 {
            return Ok(Some(s_cur));
        }
        hi = s_cur;
    } else {
        hi = 1.0;
        let mut steps = 0;
        while gap(hi)? <= 0.0 {
            hi *= 2.0;
            steps += 1;
            if steps > 2000 || !hi.is_finite() {
                return Err(PsaharaError::Tangency { left: k, right: j });
            }
        }
    }
    let mut lo = hi * 0.5;
    while gap(lo)? > 0.0 {
        hi = lo;
        lo *= 0.5;
        if lo < 1e-300 {
            return Ok(None);
        }
    }
    for _ in 0..200 {
        if hi <= lo * (1.0 + 4.0 * f64::EPSILON) {
            break;
        }
        let mid = (lo * hi).sqrt();
        if gap(mid)? <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}

/// Newton refinement of an interior tangency `(a_i, a_j)`.
fn polish_tangency(p: &SaharaPiece, q: &SaharaPiece, mut a: f64, mut b: f64) -> (f64, f64) {
    let residual = |a: f64, b: f64| {
        let f1 = p.marginal(a) - q.marginal(b);
        let f2 = q.value(b) - p.value(a) - p.marginal(a) * (b - a);
        (f1, f2)
    };
    let norm = |r: (f64, f64), a: f64, b: f64| {
        let scale = p.marginal(a).max(1e-300);
        (r.0 / scale).abs() + (r.1 / (scale * (b - a).abs().max(1e-300))).abs()
    };
    let mut best = norm(residual(a, b), a, b);
    for _ in 0..8 {
        let (f1, f2) = residual(a, b);
        let pa = p.second_derivative(a);
        let qb = q.second_derivative(b);
        let j11 = pa;
        let j12 = -qb;
        let j21 = -pa * (b - a);
        let j22 = q.marginal(b) - p.marginal(a);
        let det = j11 * j22 - j12 * j21;
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let da = (f1 * j22 - j12 * f2) / det;
        let db = (j11 * f2 - j21 * f1) / det;
        let (na, nb) = (a - da, b - db);
        if !(na < nb) {
            break;
        }
        let r = norm(residual(na, nb), na, nb);
        if !(r < best) {
            break;
        }
        best = r;
        a = na;
        b = nb;
    }
    (a, b)
}

enum Event {
    Arc { seg: usize, from: f64, to: f64 },
    Bridge { from: f64, to: f64, slope: f64 },
}

fn long_enough(a: f64, b: f64) -> bool {
    b - a > LENGTH_TOL * a.abs().max(b.abs()).max(1.0)
}

// ---- Construction ----

/// Concave envelope of a raw specification.
pub fn concave_envelope(raw: &RawUtility) -> Result<EnvelopeResult> {
    raw.check()?;
    let m = raw.segments.len();
    for (k, s) in raw.segments.iter().enumerate() {
        if !s.is_concave() {
            return Err(PsaharaError::InvalidUtility(format!(
                "segment {k} is convex"
            )));
        }
    }
    match (&raw.segments[0], &raw.segments[m - 1]) {
        (RawSegment::Sahara(first), RawSegment::Sahara(last))
            if first.alpha > 0.0 && last.alpha > 0.0 && !first.hara_limit => {}
        _ => {
            return Err(PsaharaError::NonCoercive(
                "first and last segments must be strictly concave SAHARA pieces".into(),
            ))
        }
    }
    let segs: Vec<Seg> = raw
        .segments
        .iter()
        .enumerate()
        .map(|(k, seg)| {
            let (lo, hi) = raw.interval(k);
            Seg { seg, lo, hi }
        })
        .collect();

    let mut events = Vec::new();
    let mut k = 0;
    let mut s_cur = f64::INFINITY;
    let mut x_in = f64::NEG_INFINITY;
    while k + 1 < m {
        let mut best: Option<(f64, usize)> = None;
        for j in k + 1..m {
            if let Some(sj) = switch_slope(&segs, k, j, s_cur)? {
                let take = match best {
                    None => true,
                    Some((bs, _)) => sj >= bs * (1.0 - TIE_TOL),
                };
                if take {
                    best = Some((sj, j));
                }
            }
        }
        let (s_star, j) = best.ok_or_else(|| {
            PsaharaError::NonCoercive(format!("no segment to the right overtakes segment {k}"))
        })?;
        let mut xa = segs[k].support(s_star);
        let mut xb = segs[j].support(s_star);
        if let (RawSegment::Sahara(p), RawSegment::Sahara(q)) = (segs[k].seg, segs[j].seg) {
            let interior = |x: f64, s: &Seg| x > s.lo && x < s.hi;
            if p.alpha > 0.0 && q.alpha > 0.0 && interior(xa, &segs[k]) && interior(xb, &segs[j]) {
                let (pa, pb) = polish_tangency(p, q, xa, xb);
                if pa > segs[k].lo && pa < segs[k].hi && pb > segs[j].lo && pb < segs[j].hi {
                    xa = pa;
                    xb = pb;
                }
            }
        }
        // conjugate gaps are second order in position, so supports found by
        // bisection sit about sqrt(eps) away from an interval end they touch
        let near = |a: f64, b: f64| (a - b).abs() <= SNAP_TOL * a.abs().max(b.abs()).max(1.0);
        if near(xa, segs[k].hi) {
            xa = segs[k].hi;
        }
        if near(xb, segs[j].lo) {
            xb = segs[j].lo;
        }
        if near(xa, xb) {
            xa = xb;
        }
        events.push(Event::Arc {
            seg: k,
            from: x_in,
            to: xa,
        });
        let slope = if long_enough(xa, xb) {
            (segs[j].value(xb) - segs[k].value(xa)) / (xb - xa)
        } else {
            s_star
        };
        events.push(Event::Bridge {
            from: xa,
            to: xb,
            slope,
        });
        k = j;
        s_cur = s_star;
        x_in = xb;
    }
    events.push(Event::Arc {
        seg: m - 1,
        from: x_in,
        to: f64::INFINITY,
    });
    assemble(raw, &segs, events)
}

/// Envelope of an already piecewise SAHARA utility.
pub fn concave_envelope_of(u: &PiecewiseUtility) -> Result<EnvelopeResult> {
    concave_envelope(&u.to_raw())
}

fn matches_raw_linear(raw: &RawUtility, a: f64, b: f64, slope: f64) -> bool {
    raw.segments.iter().enumerate().any(|(k, s)| match s {
        RawSegment::Sahara(p) if p.alpha == 0.0 => {
            let (lo, hi) = raw.interval(k);
            a >= lo - 1e-9 * lo.abs().max(1.0)
                && b <= hi + 1e-9 * hi.abs().max(1.0)
                && (p.gamma - slope).abs() <= 1e-9 * slope
        }
        _ => false,
    })
}

fn assemble(raw: &RawUtility, segs: &[Seg], events: Vec<Event>) -> Result<EnvelopeResult> {
    // (start, piece, is_new_bridge)
    let mut parts: Vec<(f64, SaharaPiece, bool)> = Vec::new();
    let mut bridges = Vec::new();
    for ev in events {
        match ev {
            Event::Arc { seg, from, to } => {
                if !(from.is_infinite() || to.is_infinite() || long_enough(from, to)) {
                    continue;
                }
                match segs[seg].seg {
                    RawSegment::Sahara(p) => parts.push((from, *p, false)),
                    _ => {
                        return Err(PsaharaError::InvalidUtility(format!(
                            "non-SAHARA segment {seg} lies on the envelope over [{from}, {to}]"
                        )))
                    }
                }
            }
            Event::Bridge { from, to, slope } => {
                if !long_enough(from, to) {
                    continue;
                }
                let new = !matches_raw_linear(raw, from, to, slope);
                if new {
                    bridges.push(Bridge {
                        left: from,
                        right: to,
                        slope,
                    });
                }
                parts.push((from, SaharaPiece::linear(slope, 0.0), new));
            }
        }
    }
    // merge collinear neighbours
    let mut merged: Vec<(f64, SaharaPiece, bool)> = Vec::with_capacity(parts.len());
    for part in parts {
        if let Some(last) = merged.last_mut() {
            if last.1.alpha == 0.0
                && part.1.alpha == 0.0
                && (last.1.gamma - part.1.gamma).abs() <= TIE_TOL * last.1.gamma
            {
                last.2 |= part.2;
                continue;
            }
        }
        merged.push(part);
    }
    bridges.dedup_by(|b, a| {
        if (a.slope - b.slope).abs() <= TIE_TOL * a.slope && same_x(a.right, b.left) {
            a.right = b.right;
            true
        } else {
            false
        }
    });
    let breakpoints: Vec<f64> = merged.iter().skip(1).map(|p| p.0).collect();
    let mut pieces: Vec<SaharaPiece> = Vec::with_capacity(merged.len());
    for (i, (_, piece, _)) in merged.iter().enumerate() {
        let mut p = *piece;
        if i > 0 {
            let x = breakpoints[i - 1];
            let prev = pieces[i - 1].value(x);
            p.u += prev - p.value(x);
        }
        pieces.push(p);
    }
    let envelope = PiecewiseUtility::new(breakpoints, pieces)?;
    let kinks = (1..=envelope.n())
        .filter(|&k| envelope.right_slope(k) < envelope.left_slope(k) * (1.0 - KINK_TOL))
        .map(|k| envelope.a(k))
        .collect();
    Ok(EnvelopeResult {
        envelope,
        bridges,
        kinks,
    })
}

// ---- Checks ----

/// Concavity test: continuity, concave segments and a nonincreasing slope chain.
pub fn is_concave<U: UtilityCurve + ?Sized>(u: &U) -> ConcavityCheck {
    let knots = u.knots();
    for k in 0..=knots.len() {
        if !u.segment_concave(k) {
            let x = if k == 0 {
                knots.first().copied().unwrap_or(0.0)
            } else {
                knots[k - 1]
            };
            return ConcavityCheck {
                concave: false,
                violation: Some(ConcavityViolation {
                    index: 0,
                    x,
                    kind: format!("segment {k} is convex"),
                }),
            };
        }
    }
    for (i, &a) in knots.iter().enumerate() {
        let l = u.value_left(i);
        let r = u.value_right(i);
        let jump = if l == r { 0.0 } else { (r - l).abs() };
        if !(jump <= CONTINUITY_TOL * l.abs().max(r.abs()).max(1.0)) {
            return ConcavityCheck {
                concave: false,
                violation: Some(ConcavityViolation {
                    index: i + 1,
                    x: a,
                    kind: "jump".into(),
                }),
            };
        }
        let gl = u.slope_left(i);
        let gr = u.slope_right(i);
        if gr > gl * (1.0 + KINK_TOL) || gr.is_nan() || gl.is_nan() {
            return ConcavityCheck {
                concave: false,
                violation: Some(ConcavityViolation {
                    index: i + 1,
                    x: a,
                    kind: "slope increase".into(),
                }),
            };
        }
    }
    ConcavityCheck {
        concave: true,
        violation: None,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridCheckReport {
    pub step: f64,
    pub lo: f64,
    pub hi: f64,
    /// Largest amount by which the original exceeds the envelope.
    pub max_domination_violation: f64,
    /// Largest positive second difference of the envelope.
    pub max_concavity_violation: f64,
    pub passed: bool,
}

/// Grid verification of domination and concavity around the breakpoints.
pub fn grid_check(raw: &RawUtility, env: &PiecewiseUtility, step: f64) -> Result<GridCheckReport> {
    if !(step > 0.0) {
        return Err(PsaharaError::Config(format!(
            "grid step {step} must be positive"
        )));
    }
    let knots: Vec<f64> = raw
        .breakpoints
        .iter()
        .chain(env.breakpoints())
        .copied()
        .collect();
    let lo = knots.iter().copied().fold(f64::INFINITY, f64::min).min(0.0) - 10.0;
    let hi = knots
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0)
        + 10.0;
    let n = ((hi - lo) / step).ceil() as usize + 1;
    if n > 50_000_000 {
        return Err(PsaharaError::Config("grid too fine".into()));
    }
    let mut dom: f64 = 0.0;
    let mut conc: f64 = 0.0;
    let mut prev2 = f64::NAN;
    let mut prev1 = f64::NAN;
    for i in 0..n {
        let x = lo + step * i as f64;
        let e = env.eval(x);
        let o = raw.eval(x);
        if o.is_finite() {
            dom = dom.max(o - e);
        }
        if i >= 2 {
            conc = conc.max(prev2 - 2.0 * prev1 + e);
        }
        prev2 = prev1;
        prev1 = e;
    }
    let scale = |v: f64| v / (1.0 + env.eval(lo).abs().max(env.eval(hi).abs()));
    let passed = scale(dom) < 1e-9 && scale(conc) < 1e-9;
    Ok(GridCheckReport {
        step,
        lo,
        hi,
        max_domination_violation: dom,
        max_concavity_violation: conc,
        passed,
    })
}
