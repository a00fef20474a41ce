mod common;

use common::{diff5, integrate_pieces, rel_err};
use proptest::prelude::*;
use psahara::envelope::concave_envelope;
use psahara::presets::discontinuous_demo;
use psahara::utility::{
    compose_with_contract, psahara_eval, sahara_ara, sahara_inverse_marginal, sahara_marginal,
    sahara_value, validate, ContractSegment, LinearContract, PiecewiseUtility, SaharaPiece,
};

fn piece() -> impl Strategy<Value = SaharaPiece> {
    (
        0.05f64..6.0,
        0.05f64..4.0,
        -5.0f64..5.0,
        0.1f64..10.0,
        -2.0f64..2.0,
    )
        .prop_map(|(a, b, d, g, u)| SaharaPiece::new(a, b, d, g, u))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn inverse_marginal_roundtrip(p in piece(), x in -100.0f64..100.0) {
        let back = sahara_inverse_marginal(sahara_marginal(x, &p).unwrap(), &p).unwrap();
        prop_assert!((back - x).abs() < 1e-10 * x.abs().max(1.0), "{back} vs {x}");
    }

    #[test]
    fn marginal_is_derivative(p in piece(), dx in -10.0f64..10.0) {
        let x = p.d + dx;
        // the offset u is additive and only costs digits in the differences
        let q = SaharaPiece { u: 0.0, ..p };
        let h = 1e-3 * q.beta.hypot(dx);
        let fd = diff5(|v| q.value(v), x, h);
        prop_assert!(rel_err(fd, p.marginal(x)) < 1e-6);
    }

    #[test]
    fn ara_matches_curvature(p in piece(), dx in -10.0f64..10.0) {
        let x = p.d + dx;
        // the offset u is additive and only costs digits in the differences
        let q = SaharaPiece { u: 0.0, ..p };
        let h = 1e-3 * q.beta.hypot(dx);
        let first = diff5(|v| q.value(v), x, h);
        let second = diff5(|v| diff5(|w| q.value(w), v, h), x, h);
        prop_assert!(rel_err(-second / first, sahara_ara(x, &p).unwrap()) < 1e-4);
    }

    #[test]
    fn ara_is_even_about_d(p in piece(), h in 0.0f64..50.0) {
        prop_assert!((p.ara(p.d + h) - p.ara(p.d - h)).abs() < 1e-14 * p.ara(p.d));
    }

    #[test]
    fn affine_composition_is_pointwise(p in piece(), a in 0.05f64..5.0, b in -3.0f64..3.0, x in -30.0f64..30.0) {
        let u = PiecewiseUtility::single(p).unwrap();
        let h = LinearContract::new(vec![ContractSegment { from: None, slope: a, intercept: b }]).unwrap();
        let c = compose_with_contract(&u, &h).unwrap();
        let expect = psahara_eval(&u, a * x + b).unwrap();
        prop_assert!((c.eval(x) - expect).abs() < 1e-10 * expect.abs().max(1.0));
    }
}

#[test]
fn value_examples() {
    let p = SaharaPiece::new(2.0, 1.0, 0.0, 1.0, 0.0);
    assert!((sahara_value(0.0, &p).unwrap() + 2.0 / 3.0).abs() < 1e-15);
    let log = SaharaPiece::new(1.0, 1.0, 0.7, 1.0, 0.0);
    assert!(sahara_value(0.7, &log).unwrap().abs() < 1e-15);
}

#[test]
fn value_matches_integrated_marginal() {
    let p = SaharaPiece::new(1.7, 1.0, 3.0, 2.0, 0.0);
    let integral = integrate_pieces(|x| p.marginal(x), &[3.0, 5.0], 32, 8);
    let v = sahara_value(5.0, &p).unwrap();
    assert!((v - sahara_value(3.0, &p).unwrap() - integral).abs() < 1e-8);
}

#[test]
fn marginal_examples() {
    for alpha in [0.3, 1.0, 2.0, 4.5] {
        let p = SaharaPiece::new(alpha, 1.0, -2.0, 1.0, 0.0);
        assert!((sahara_marginal(-2.0, &p).unwrap() - 1.0).abs() < 1e-15);
    }
    let p = SaharaPiece::new(2.0, 1.0, 0.0, 1.0, 0.0);
    assert!(sahara_marginal(1e8, &p).unwrap() < 1e-16);
    let q = SaharaPiece::new(2.2, 1.0, 1.0, 1.5, 0.0);
    let fd = (q.value(2.0 + 1e-5) - q.value(2.0 - 1e-5)) / 2e-5;
    assert!(rel_err(fd, q.marginal(2.0)) < 1e-6);
}

#[test]
fn inverse_marginal_examples() {
    let p = SaharaPiece::new(2.0, 1.0, 0.0, 1.0, 0.0);
    assert!(sahara_inverse_marginal(1.0, &p).unwrap().abs() < 1e-15);
    let q = SaharaPiece::new(3.3, 0.4, -1.2, 2.5, 0.0);
    let at_d = q.gamma * q.beta.powf(-q.alpha);
    assert!((sahara_inverse_marginal(at_d, &q).unwrap() + 1.2).abs() < 1e-12);
    let r = SaharaPiece::new(2.0, 1.0, 1.0, 1.0, 0.0);
    let x = sahara_inverse_marginal(0.5, &r).unwrap();
    assert!((sahara_marginal(x, &r).unwrap() - 0.5).abs() < 1e-12);
    assert!(sahara_inverse_marginal(0.5, &SaharaPiece::linear(1.0, 0.0)).is_err());
}

#[test]
fn ara_example_and_gamma_independence() {
    let p = SaharaPiece::new(2.0, 0.1, 0.0, 1.0, 0.0);
    assert!((sahara_ara(0.0, &p).unwrap() - 20.0).abs() < 1e-12);
    let q = SaharaPiece::new(1.7, 1.0, 3.0, 9.0, 4.0);
    let fd = diff5(|x| q.marginal(x), 1.0, 1e-3);
    assert!(rel_err(-fd / q.marginal(1.0), sahara_ara(1.0, &q).unwrap()) < 1e-4);
}

#[test]
fn incentive_contract_pieces() {
    let b = 0.05f64.exp();
    let u = PiecewiseUtility::single(SaharaPiece::new(2.0, 1.0, 0.0, 1.0, 0.0)).unwrap();
    let c = compose_with_contract(&u, &LinearContract::incentive(0.2, 0.02, b).unwrap()).unwrap();
    let p = c.pieces();
    assert_eq!(c.breakpoints(), &[b]);
    assert!((p[0].beta - 50.0).abs() < 1e-12);
    assert!((p[1].beta - 1.0 / 0.22).abs() < 1e-12);
    assert!((p[1].d - 0.2 * b / 0.22).abs() < 1e-12);
    assert!((p[0].gamma - 0.02f64.powf(-1.0)).abs() < 1e-9);
}

#[test]
fn composition_matches_at_random_points() {
    let b = 1.1;
    let first = SaharaPiece::new(2.0, 1.0, 0.0, 3.0, 0.0);
    let mut second = SaharaPiece::new(1.5, 0.5, 0.2, 1.0, 0.0);
    second.u = first.value(0.0) - second.value(0.0);
    let u = PiecewiseUtility::new(vec![0.0], vec![first, second]).unwrap();
    let h = LinearContract::incentive(0.2, 0.02, b).unwrap();
    let c = compose_with_contract(&u, &h).unwrap();
    for i in 0..10 {
        let x = -20.0 + 4.3 * i as f64;
        let e = psahara_eval(&u, h.apply(x)).unwrap();
        assert!((c.eval(x) - e).abs() < 1e-10 * e.abs().max(1.0), "at {x}");
    }
}

#[test]
fn sentinel_slopes() {
    let env = concave_envelope(&discontinuous_demo()).unwrap().envelope;
    assert_eq!(env.right_slope(0), f64::INFINITY);
    assert_eq!(env.left_slope(env.n() + 1), 0.0);
}

#[test]
fn demo_envelope_is_continuous_and_increasing() {
    let env = concave_envelope(&discontinuous_demo()).unwrap().envelope;
    for k in 1..=env.n() {
        let a = env.a(k);
        let l = env.pieces()[k - 1].value(a);
        let r = env.pieces()[k].value(a);
        assert!((l - r).abs() < 1e-10 * l.abs().max(1.0));
    }
    let xs = common::linspace(-10.0, 10.0, 1000);
    assert!(xs.windows(2).all(|w| env.eval(w[1]) > env.eval(w[0])));
    let report = validate(&env, None);
    assert!(report.clean && report.slope_chain_nonincreasing);
}

#[test]
fn raw_demo_report_flags_jump_and_drop() {
    let report = validate(&discontinuous_demo(), None);
    assert!(!report.clean);
    assert!(report.discontinuities.contains(&-6.0));
    assert!(!report.monotonicity_violations.is_empty());
}

#[test]
fn single_piece_report_is_clean() {
    let u = PiecewiseUtility::single(SaharaPiece::new(0.7, 2.0, 1.0, 1.0, 0.0)).unwrap();
    assert!(validate(&u, None).clean);
}
