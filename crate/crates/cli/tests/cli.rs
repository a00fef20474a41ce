use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psahara::presets::discontinuous_demo;
use serde_json::Value;
use tempfile::TempDir;

fn psahara(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psahara"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn demo_raw(dir: &TempDir) -> PathBuf {
    let p = dir.path().join("demo.json");
    std::fs::write(&p, serde_json::to_string(&discontinuous_demo()).unwrap()).unwrap();
    p
}

/// Solved policy on the one-asset market with a single piece and no shift.
fn single_piece_policy(dir: &TempDir) -> PathBuf {
    let u = dir.path().join("single.json");
    std::fs::write(
        &u,
        r#"{"breakpoints": [], "pieces": [{"alpha": 2.0, "beta": 1.0, "d": 0.0, "gamma": 1.0}]}"#,
    )
    .unwrap();
    let p = dir.path().join("policy.json");
    let out = psahara(&["policy", "--utility", path_str(&u), "--out", path_str(&p)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    p
}

#[test]
fn empty_argv_prints_usage() {
    let out = psahara(&[]);
    assert_eq!(code(&out), 64);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&psahara(&["validate", "--bogus"])), 64);
    assert_eq!(code(&psahara(&["frobnicate"])), 64);
}

#[test]
fn missing_file_exits_66() {
    let out = psahara(&["validate", "--utility", "/nonexistent/u.json"]);
    assert_eq!(code(&out), 66);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");
}

#[test]
fn bad_input_reports_json_error() {
    let dir = TempDir::new().unwrap();
    let u = dir.path().join("bad.json");
    std::fs::write(
        &u,
        r#"{"pieces": [{"alpha": -1.0, "beta": 1.0, "d": 0.0, "gamma": 1.0}], "breakpoints": []}"#,
    )
    .unwrap();
    let out = psahara(&["envelope", "--utility", path_str(&u)]);
    assert_eq!(code(&out), 2);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].is_string() && err["message"].is_string());

    std::fs::write(&u, r#"{"something": 1}"#).unwrap();
    let out = psahara(&["envelope", "--utility", path_str(&u)]);
    assert_eq!(code(&out), 2);
    assert_eq!(
        serde_json::from_slice::<Value>(&out.stderr).unwrap()["error"],
        "invalid_utility"
    );

    let out = psahara(&["plot-data", "--range", "5:1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn validate_lists_demo_discontinuities() {
    let dir = TempDir::new().unwrap();
    let raw = demo_raw(&dir);
    let out = psahara(&[
        "validate",
        "--utility",
        path_str(&raw),
        "--grid",
        "-20:20:4001",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let text = report.to_string();
    assert!(text.contains("discontinuit"), "{text}");
    assert!(!report["discontinuities"].as_array().unwrap().is_empty());
}

#[test]
fn envelope_policy_simulate_pipeline() {
    let dir = TempDir::new().unwrap();
    let raw = demo_raw(&dir);
    let env = dir.path().join("env.json");
    let out = psahara(&[
        "envelope",
        "--utility",
        path_str(&raw),
        "--grid-check",
        "1e-3",
        "--out",
        path_str(&env),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let e = read_json(&env);
    assert_eq!(e["grid_check"]["passed"], true);
    assert_eq!(e["bridges"].as_array().unwrap().len(), 3);

    // the envelope file is itself a valid utility input
    let env2 = dir.path().join("env2.json");
    let out = psahara(&[
        "envelope",
        "--utility",
        path_str(&env),
        "--out",
        path_str(&env2),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(read_json(&env2)["envelope"], e["envelope"]);

    let pol = dir.path().join("policy.json");
    let out = psahara(&[
        "policy",
        "--utility",
        path_str(&env),
        "--x0",
        "2.0",
        "--eval",
        "t=0.5,xi=1.0",
        "--eval",
        "t=0.9,xi=0.3",
        "--out",
        path_str(&pol),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let p = read_json(&pol);
    assert_eq!(p["evaluations"].as_array().unwrap().len(), 2);
    assert!(p["y_star"].as_f64().unwrap() > 0.0);

    let sims: Vec<Value> = (0..2)
        .map(|i| {
            let sim = dir.path().join(format!("sim{i}.json"));
            let out = psahara(&[
                "simulate",
                "--policy",
                path_str(&pol),
                "--paths",
                "2000",
                "--steps",
                "24",
                "--seed",
                "7",
                "--out",
                path_str(&sim),
            ]);
            assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
            read_json(&sim)
        })
        .collect();
    assert_eq!(sims[0], sims[1]);
    assert!(sims[0]["martingale"]["checkpoints"].is_array());

    let bytes = |i: usize| std::fs::read(dir.path().join(format!("sim{i}.json"))).unwrap();
    assert_eq!(bytes(0), bytes(1));
    let back: psahara::montecarlo::SimResult = serde_json::from_value(sims[0].clone()).unwrap();
    assert_eq!(back.terminal_kernel.len(), 2000);
}

#[test]
fn incentive_envelope_from_flags() {
    let out = psahara(&[
        "envelope",
        "--benchmark",
        "1.0",
        "--incentive",
        "w=0.2,v=0.02",
    ]);
    assert_eq!(code(&out), 0);
    let e: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(e["bridges"].as_array().unwrap().len(), 1);
    assert_eq!(
        code(&psahara(&[
            "envelope",
            "--benchmark",
            "1.0",
            "--incentive",
            "q=1"
        ])),
        2
    );
}

#[test]
fn plot_data_endpoints_approach_limits() {
    let dir = TempDir::new().unwrap();
    let pol = single_piece_policy(&dir);
    let limits = &read_json(&pol)["limits"];
    let small = limits["small_kernel"][0].as_f64().unwrap();
    let large = limits["large_kernel"][0].as_f64().unwrap();
    let csv_path = dir.path().join("curve.csv");
    let out = psahara(&[
        "plot-data",
        "--policy",
        path_str(&pol),
        "--sweep",
        "xi",
        "--range",
        "1e-10:1e10",
        "--points",
        "101",
        "--log",
        "--out",
        path_str(&csv_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        [
            "xi",
            "X_total",
            "X_D",
            "X_B",
            "X_R",
            "X_Rbar",
            "pi_1",
            "pi_2",
            "pi_3",
            "pi_4",
            "pi_over_X"
        ]
    );
    let col = header.iter().position(|h| h == "pi_over_X").unwrap();
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 101);
    let first = rows[0][col];
    let last = rows[100][col];
    assert!((first / small - 1.0).abs() < 0.01, "{first} vs {small}");
    assert!((last / large - 1.0).abs() < 0.01, "{last} vs {large}");
}

#[test]
fn plot_data_is_deterministic_and_sweeps_time() {
    let a = psahara(&[
        "plot-data",
        "--sweep",
        "t",
        "--range",
        "0:0.99",
        "--points",
        "12",
    ]);
    let b = psahara(&[
        "plot-data",
        "--sweep",
        "t",
        "--range",
        "0:0.99",
        "--points",
        "12",
    ]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("t,X_total"));
    assert_eq!(text.lines().count(), 13);
}

fn synthetic_prices(dir: &TempDir, rows: usize) -> PathBuf {
    let mut text = String::from("date,AAA,BBB\n");
    let (mut a, mut b) = (100.0f64, 50.0f64);
    for i in 0..rows {
        text.push_str(&format!("{i},{a},{b}\n"));
        let x = i as f64;
        a *= (0.0004 + 0.012 * (1.7 * x).sin()).exp();
        b *= (0.0002 + 0.004 * (1.7 * x).sin() + 0.009 * (0.61 * x + 1.0).cos()).exp();
    }
    let p = dir.path().join("prices.csv");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn backtest_on_price_file() {
    let dir = TempDir::new().unwrap();
    let prices = synthetic_prices(&dir, 400);
    let report = dir.path().join("report.json");
    let out = psahara(&[
        "backtest",
        "--prices",
        path_str(&prices),
        "--incentive",
        "w=0.2,v=0.02",
        "--alpha",
        "2",
        "--beta",
        "1",
        "--d",
        "0",
        "--estimator",
        "mle",
        "--rf",
        "0.01",
        "--trade-days",
        "126",
        "--out",
        path_str(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&report);
    assert_eq!(r["report"]["wealth"].as_array().unwrap().len(), 127);
    assert_eq!(r["sigma"].as_array().unwrap().len(), 2);
    let back: psahara::backtest::BacktestReport =
        serde_json::from_value(r["report"].clone()).unwrap();
    assert_eq!(back.wealth[0], 1.0);

    let out = psahara(&[
        "backtest",
        "--prices",
        path_str(&prices),
        "--estimator",
        "implied",
    ]);
    assert_eq!(code(&out), 2);
    let out = psahara(&[
        "backtest",
        "--prices",
        path_str(&prices),
        "--trade-days",
        "399",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn implied_vol_single_and_file() {
    let out = psahara(&[
        "implied-vol",
        "--S",
        "100",
        "--K",
        "100",
        "--r",
        "0",
        "--T",
        "1",
        "--price",
        "7.965567455405804",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["implied_vol"].as_f64().unwrap() - 0.2).abs() < 1e-8);

    let dir = TempDir::new().unwrap();
    let quotes = dir.path().join("quotes.csv");
    let mut text = String::from("asset,spot,strike,rate,maturity,price\n");
    for (k, vol) in [(90.0, 0.25), (100.0, 0.2), (110.0, 0.18)] {
        let p = psahara::volatility::bs_put_price(100.0, k, 0.01, 0.5, vol).unwrap();
        text.push_str(&format!("X,100,{k},0.01,0.5,{p}\n"));
    }
    std::fs::write(&quotes, text).unwrap();
    let out = psahara(&["implied-vol", "--quotes", path_str(&quotes)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["quotes"].as_array().unwrap().len(), 3);
    assert!((v["smile_average"]["X"].as_f64().unwrap() - 0.21).abs() < 1e-8);

    let out = psahara(&[
        "implied-vol",
        "--S",
        "100",
        "--K",
        "100",
        "--T",
        "1",
        "--price",
        "150",
    ]);
    assert_eq!(code(&out), 2);
}
