use nalgebra::{DMatrix, DVector, Vector3};
use psahara::market::{kernel_terminal_law, theta, MarketModel};
use psahara::montecarlo::{simulate, SimConfig};
use psahara::policy::OptimalPolicy;
use psahara::presets::scalar_market;
use psahara::utility::{PiecewiseUtility, SaharaPiece};

fn three_factor() -> MarketModel {
    let sigma = DMatrix::from_row_slice(2, 3, &[0.2, 0.05, -0.03, 0.04, 0.15, 0.1]);
    MarketModel::constant(1.0, 12.0, 0.02, DVector::from_vec(vec![0.09, 0.07]), sigma).unwrap()
}

#[test]
fn scalar_price_of_risk() {
    let m = scalar_market(1.0).unwrap();
    assert!((theta(0.5, &m).unwrap()[0] - 0.56).abs() < 1e-14);
}

#[test]
fn price_of_risk_is_minimum_norm() {
    let m = three_factor();
    let s = m.vol(0.0).clone();
    let th = theta(0.0, &m).unwrap();
    let excess = DVector::from_vec(vec![0.07, 0.05]);
    assert!((&s * &th - &excess).norm() < 1e-10);

    let lsq = s.clone().svd(true, true).pseudo_inverse(1e-14).unwrap() * &excess;
    assert!((&th - lsq).norm() < 1e-12);

    // the kernel of a 2x3 matrix is spanned by the cross product of its rows
    let r0 = Vector3::new(s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let r1 = Vector3::new(s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let ker = r0.cross(&r1);
    assert!((&s * DVector::from_column_slice(ker.as_slice())).norm() < 1e-14);
    assert!(
        th.iter()
            .zip(ker.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .abs()
            < 1e-10
    );
}

#[test]
fn singular_volatility_is_rejected() {
    let sigma = DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.4, 0.2]);
    let m = MarketModel::constant(1.0, 12.0, 0.02, DVector::from_vec(vec![0.09, 0.07]), sigma);
    assert!(m.is_err());
}

#[test]
fn drift_below_rate_is_rejected_unless_relaxed() {
    assert!(MarketModel::scalar(1.0, 0.05, 0.04, 0.2).is_err());
    let m = MarketModel::constant_relaxed(
        1.0,
        252.0,
        0.05,
        DVector::from_element(1, 0.04),
        DMatrix::from_element(1, 1, 0.2),
    )
    .unwrap();
    assert!(m.theta_at(0.0)[0] < 0.0);
}

#[test]
fn integrals() {
    let m = scalar_market(1.0).unwrap();
    assert!((m.theta_sq_integral(0.0, 1.0).unwrap() - 0.3136).abs() < 1e-12);
    assert_eq!(m.theta_sq_integral(1.0, 1.0).unwrap(), 0.0);
    assert_eq!(m.rate_integral(1.0, 1.0).unwrap(), 0.0);
    assert!(m.rate_integral(0.5, 0.4).is_err());
    assert!(m.rate_integral(0.0, 1.5).is_err());

    let two = MarketModel::new(
        2.0,
        1.0,
        vec![0.03, 0.05],
        vec![DVector::from_element(1, 0.09)],
        vec![DMatrix::from_element(1, 1, 0.2)],
        false,
    )
    .unwrap();
    assert!((two.rate_integral(0.0, 2.0).unwrap() - 0.08).abs() < 1e-15);
    assert!((two.rate_integral(0.5, 1.5).unwrap() - 0.04).abs() < 1e-15);
}

#[test]
fn kernel_law() {
    let m = scalar_market(1.0).unwrap();
    let (mean, var) = kernel_terminal_law(0.0, 1.0, 1.0, &m).unwrap();
    assert!((mean + 0.1868).abs() < 1e-12);
    assert!((var - 0.3136).abs() < 1e-12);
    assert!(((mean + 0.5 * var).exp() - (-0.03f64).exp()).abs() < 1e-12);
    assert!(kernel_terminal_law(0.0, 1.0, 0.0, &m).is_err());

    let flat = MarketModel::constant_relaxed(
        1.0,
        252.0,
        0.0,
        DVector::from_element(1, 0.0),
        DMatrix::from_element(1, 1, 0.2),
    )
    .unwrap();
    assert_eq!(flat.kernel_terminal_law(0.0, 1.0).unwrap(), (0.0, 0.0));
}

#[test]
fn market_json_broadcasts_scalars() {
    let text = r#"{"T": 1.0, "steps_per_year": 4, "r": 0.03, "mu": 0.086, "sigma": 0.1}"#;
    let m: MarketModel = serde_json::from_str(text).unwrap();
    assert_eq!(m.n_cells(), 4);
    assert!((m.theta_at(0.9)[0] - 0.56).abs() < 1e-14);

    let path = r#"{"T": 2.0, "steps_per_year": 1, "r": [0.03, 0.05], "mu": [[0.09], [0.1]], "sigma": [[[0.2]], [[0.25]]]}"#;
    let m: MarketModel = serde_json::from_str(path).unwrap();
    let back: MarketModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(
        back.rate_integral(0.0, 2.0).unwrap(),
        m.rate_integral(0.0, 2.0).unwrap()
    );
    assert_eq!(
        back.theta_sq_integral(0.0, 2.0).unwrap(),
        m.theta_sq_integral(0.0, 2.0).unwrap()
    );

    let bad =
        r#"{"T": 2.0, "steps_per_year": 1, "r": [0.03, 0.05, 0.04], "mu": 0.09, "sigma": 0.2}"#;
    assert!(serde_json::from_str::<MarketModel>(bad).is_err());
}

#[test]
fn simulated_kernel_matches_its_law() {
    let m = three_factor();
    let env = PiecewiseUtility::single(SaharaPiece::new(2.0, 1.0, 0.0, 1.0, 0.0)).unwrap();
    let policy = OptimalPolicy::solve(env, m.clone(), 1.0).unwrap();
    let mut cfg = SimConfig::new(100_000, 12, 5);
    cfg.antithetic = false;
    let res = simulate(&policy, &cfg).unwrap();
    let n = res.terminal_kernel.len() as f64;
    let mean = res.terminal_kernel.iter().sum::<f64>() / n;
    let sd = (res
        .terminal_kernel
        .iter()
        .map(|x| (x - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0))
        .sqrt();
    assert!(
        (mean - (-0.02f64).exp()).abs() < 3.0 * sd / n.sqrt(),
        "{mean}"
    );

    let (lm, lv) = m.kernel_terminal_law(0.0, 1.0).unwrap();
    let logs: Vec<f64> = res.terminal_kernel.iter().map(|x| x.ln()).collect();
    let log_mean = logs.iter().sum::<f64>() / n;
    assert!((log_mean - lm).abs() < 3.0 * (lv / n).sqrt());
    let log_var = logs.iter().map(|x| (x - log_mean).powi(2)).sum::<f64>() / (n - 1.0);
    // the sample variance of a normal has standard error var * sqrt(2 / (n - 1))
    assert!((log_var - lv).abs() < 3.0 * lv * (2.0 / (n - 1.0)).sqrt());
}
