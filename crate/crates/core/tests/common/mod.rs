//! Independent numerical oracles used only by the test suites.
#![allow(dead_code)]

use nalgebra::DMatrix;

/// Nodes and weights for `E[f(Z)]`, `Z ~ N(0, 1)` (Golub-Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jac = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    (
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1 / total).collect(),
    )
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Composite Gauss-Legendre over the sorted cut points.
pub fn integrate_pieces(f: impl Fn(f64) -> f64, cuts: &[f64], nodes: usize, sub: usize) -> f64 {
    let (x, w) = gauss_legendre(nodes);
    let mut total = 0.0;
    for c in cuts.windows(2) {
        let h = (c[1] - c[0]) / sub as f64;
        if !(h > 0.0) {
            continue;
        }
        for s in 0..sub {
            let a = c[0] + h * s as f64;
            let mid = a + 0.5 * h;
            for k in 0..nodes {
                total += 0.5 * h * w[k] * f(mid + 0.5 * h * x[k]);
            }
        }
    }
    total
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[g(Z)]` for `Z ~ N(0,1)` by Gauss-Legendre on `[-L, L]`, split at `breaks`.
pub fn normal_expectation(g: impl Fn(f64) -> f64, breaks: &[f64]) -> f64 {
    const L: f64 = 40.0;
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|b| b.abs() < L).collect();
    cuts.push(-L);
    cuts.push(L);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    integrate_pieces(|z| g(z) * std_normal_pdf(z), &cuts, 48, 16)
}

/// Indices of the upper convex hull of points sorted by `x`.
pub fn upper_hull(xs: &[f64], ys: &[f64]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::new();
    for i in 0..xs.len() {
        if !ys[i].is_finite() {
            continue;
        }
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a]);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// Hull edges spanning more than `min_cells` grid cells, as `(left, right, slope)`.
pub fn hull_bridges(xs: &[f64], ys: &[f64], min_cells: usize) -> Vec<(f64, f64, f64)> {
    let h = upper_hull(xs, ys);
    h.windows(2)
        .filter(|w| w[1] - w[0] > min_cells)
        .map(|w| {
            (
                xs[w[0]],
                xs[w[1]],
                (ys[w[1]] - ys[w[0]]) / (xs[w[1]] - xs[w[0]]),
            )
        })
        .collect()
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Grid point maximising `values[i] - y * xs[i]`.
pub fn argmax_affine(xs: &[f64], values: &[f64], y: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut at = f64::NAN;
    for (x, v) in xs.iter().zip(values) {
        let s = v - y * x;
        if s > best {
            best = s;
            at = *x;
        }
    }
    at
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut p = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let k = k as f64;
        p += sign * 2.0 * (-2.0 * k * k * lambda * lambda).exp();
        sign = -sign;
    }
    (d, p.clamp(0.0, 1.0))
}

/// Central difference of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Five-point first derivative.
pub fn diff5(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Relative error that falls back to absolute near zero.
pub fn mixed_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// Black-Scholes put by integrating the payoff against the lognormal terminal law.
pub fn put_by_quadrature(s: f64, k: f64, r: f64, t: f64, vol: f64) -> f64 {
    let sd = vol * t.sqrt();
    let drift = (r - 0.5 * vol * vol) * t;
    let z_star = ((k / s).ln() - drift) / sd;
    let payoff = |z: f64| (k - s * (drift + sd * z).exp()).max(0.0);
    (-r * t).exp() * normal_expectation(payoff, &[z_star])
}
