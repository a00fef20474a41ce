//! Standard normal distribution helpers with tail-safe logarithms.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-x * FRAC_1_SQRT_2)
    }
}

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
    }
}

/// Log of the standard normal density.
pub fn log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Log of the standard normal CDF, accurate deep into the lower tail.
pub fn log_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x < -37.0 {
        // asymptotic Mills-ratio series
        let z = 1.0 / (x * x);
        let series =
            1.0 - z * (1.0 - 3.0 * z * (1.0 - 5.0 * z * (1.0 - 7.0 * z * (1.0 - 9.0 * z))));
        return -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + series.ln();
    }
    if x > 5.0 {
        return (-cdf(-x)).ln_1p();
    }
    cdf(x).ln()
}

/// `log(Φ(a) − Φ(b))` for `a ≥ b`; `-inf` when the interval is empty.
pub fn log_delta(a: f64, b: f64) -> f64 {
    if a <= b || a == f64::NEG_INFINITY || b == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if b == f64::NEG_INFINITY {
        return log_cdf(a);
    }
    if a == f64::INFINITY {
        return log_cdf(-b);
    }
    if a <= 0.0 {
        tail_gap(log_cdf(a), log_cdf(b))
    } else if b >= 0.0 {
        tail_gap(log_cdf(-b), log_cdf(-a))
    } else {
        (cdf(a) - cdf(b)).max(0.0).ln()
    }
}

fn tail_gap(hi: f64, lo: f64) -> f64 {
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    let d = lo - hi;
    if d > -std::f64::consts::LN_2 {
        hi + (-d.exp_m1()).ln()
    } else {
        hi + (-d.exp()).ln_1p()
    }
}

/// `Φ(a) − Φ(b)` with sign, computed through [`log_delta`].
pub fn delta(a: f64, b: f64) -> f64 {
    if a >= b {
        log_delta(a, b).exp()
    } else {
        -log_delta(b, a).exp()
    }
}

/// `exp(x)` with the ±700 overflow convention used by the closed forms.
pub fn exp_clamped(x: f64) -> f64 {
    if x > 700.0 {
        f64::INFINITY
    } else if x < -700.0 {
        0.0
    } else {
        x.exp()
    }
}
