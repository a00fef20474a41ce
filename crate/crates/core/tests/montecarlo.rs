use nalgebra::{DMatrix, DVector};
use psahara::envelope::concave_envelope;
use psahara::market::MarketModel;
use psahara::montecarlo::{martingale_check, simulate, SimConfig};
use psahara::policy::incentive::IncentivePolicy;
use psahara::policy::OptimalPolicy;
use psahara::presets::{discontinuous_demo, scalar_market, IncentiveParams};
use psahara::utility::{PiecewiseUtility, SaharaPiece};

fn single_policy(market: MarketModel) -> OptimalPolicy {
    let env = PiecewiseUtility::single(SaharaPiece::new(2.0, 1.0, 0.0, 1.0, 0.0)).unwrap();
    OptimalPolicy::solve(env, market, 1.0).unwrap()
}

fn demo_policy() -> OptimalPolicy {
    let env = concave_envelope(&discontinuous_demo()).unwrap().envelope;
    OptimalPolicy::solve(env, scalar_market(1.0).unwrap(), 1.0).unwrap()
}

#[test]
fn same_seed_is_bit_identical() {
    let p = demo_policy();
    let cfg = SimConfig::new(500, 50, 99);
    let a = simulate(&p, &cfg).unwrap();
    let b = simulate(&p, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    let c = simulate(&p, &SimConfig::new(500, 50, 100)).unwrap();
    assert_ne!(a.terminal_wealth, c.terminal_wealth);
}

#[test]
fn sample_counts_match_config() {
    let p = demo_policy();
    let mut cfg = SimConfig::new(300, 40, 1);
    cfg.antithetic = true;
    let res = simulate(&p, &cfg).unwrap();
    assert_eq!(res.terminal_wealth.len(), 300);
    assert_eq!(res.terminal_kernel.len(), 300);
    assert_eq!(res.terminal_wealth_euler.as_ref().unwrap().len(), 300);
    let ts: Vec<f64> = res.checkpoints.iter().map(|c| c.t).collect();
    for t in [0.25, 0.5, 0.75, 1.0] {
        assert!(ts.iter().any(|s| (s - t).abs() < 1e-12), "{ts:?}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let p = demo_policy();
    assert!(simulate(&p, &SimConfig::new(1, 10, 0)).is_err());
    assert!(simulate(&p, &SimConfig::new(10, 0, 0)).is_err());
    let mut odd = SimConfig::new(11, 10, 0);
    odd.antithetic = true;
    assert!(simulate(&p, &odd).is_err());
}

#[test]
fn antithetic_pairs_reduce_variance() {
    let p = single_policy(scalar_market(1.0).unwrap());
    let mut cfg = SimConfig::new(20_000, 20, 7);
    cfg.euler = false;
    let plain = simulate(&p, &cfg).unwrap();
    cfg.antithetic = true;
    let anti = simulate(&p, &cfg).unwrap();
    let se = |r: &psahara::montecarlo::SimResult| {
        r.checkpoints.last().unwrap().deflated_wealth.std_error
    };
    let ratio = (se(&anti) / se(&plain)).powi(2);
    assert!(ratio < 0.75, "variance ratio {ratio}");
}

#[test]
fn incentive_policy_is_a_martingale() {
    let p = IncentivePolicy::solve(
        IncentiveParams::standard(0.03f64.exp()),
        scalar_market(1.0).unwrap(),
        1.0,
    )
    .unwrap();
    let mut cfg = SimConfig::new(100_000, 52, 2024);
    cfg.euler = false;
    let report = martingale_check(&simulate(&p, &cfg).unwrap());
    assert!(report.passed, "{report:?}");
}

#[test]
fn perturbed_multiplier_fails_the_check() {
    let p = demo_policy().with_scaled_multiplier(1.1);
    let mut cfg = SimConfig::new(100_000, 20, 3);
    cfg.euler = false;
    let report = martingale_check(&simulate(&p, &cfg).unwrap());
    assert!(!report.checkpoints.last().unwrap().passed);
}

#[test]
fn riskless_market_is_exact() {
    let m = MarketModel::constant_relaxed(
        1.0,
        1.0,
        0.03,
        DVector::from_element(1, 0.03),
        DMatrix::from_element(1, 1, 0.2),
    )
    .unwrap();
    let p = single_policy(m);
    let res = simulate(&p, &SimConfig::new(10, 1, 0)).unwrap();
    assert_eq!(res.checkpoints.len(), 1);
    let growth = 0.03f64.exp();
    for (&xi, &x) in res.terminal_kernel.iter().zip(&res.terminal_wealth) {
        assert!((xi - 1.0 / growth).abs() < 1e-15);
        assert!((x - growth).abs() < 1e-12);
    }
    let report = martingale_check(&res);
    assert!(report.passed);
    for c in &report.checkpoints {
        assert!((c.mean - 1.0).abs() < 1e-12);
    }
}
