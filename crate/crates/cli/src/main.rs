//! `psahara`: envelopes, optimal policies, simulation and backtests from the command line.

mod io;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use psahara::backtest::{
    fit_market, run_backtest, BacktestReport, Estimator, PricePanel, TRADING_DAYS,
};
use psahara::envelope::{
    concave_envelope, concave_envelope_of, grid_check, EnvelopeResult, GridCheckReport,
};
use psahara::montecarlo::{martingale_check, simulate, MartingaleReport, SimConfig, SimResult};
use psahara::policy::incentive::IncentivePolicy;
use psahara::policy::{OptimalPolicy, PortfolioTerms, WealthComponents};
use psahara::presets::{discontinuous_demo, scalar_market, IncentiveParams};
use psahara::utility::{validate, GridSpec};
use psahara::volatility::{implied_vol, read_quotes, smile_average};
use psahara::{PsaharaError, Result};
use serde::Serialize;

use crate::io::{emit, emit_json, key_values, read_market, read_utility, UtilityFile};

const EXIT_VALIDATION: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_NO_INPUT: u8 = 66;

#[derive(Parser)]
#[command(name = "psahara", version, about, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Concave envelope of a raw or piecewise utility.
    Envelope(EnvelopeArgs),
    /// Solve the budget multiplier and evaluate wealth and portfolio.
    Policy(PolicyArgs),
    /// Monte Carlo paths of kernel and wealth under a solved policy.
    Simulate(SimulateArgs),
    /// Trade the incentive strategy over a price panel.
    Backtest(BacktestArgs),
    /// Black-Scholes implied volatility of put quotes.
    ImpliedVol(ImpliedVolArgs),
    /// Wealth and portfolio decomposition along a sweep, as CSV.
    PlotData(PlotArgs),
    /// Continuity, monotonicity and slope-chain report for a utility.
    Validate(ValidateArgs),
}

#[derive(Args, Clone)]
struct IncentiveFlags {
    /// Contract weights, e.g. `w=0.2,v=0.02`.
    #[arg(long, default_value = "w=0.2,v=0.02")]
    incentive: String,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.0)]
    d: f64,
}

impl IncentiveFlags {
    fn params(&self, benchmark: f64) -> Result<IncentiveParams> {
        let mut p = IncentiveParams {
            benchmark,
            alpha: self.alpha,
            beta: self.beta,
            d: self.d,
            ..IncentiveParams::standard(benchmark)
        };
        for (k, v) in key_values(&self.incentive).map_err(PsaharaError::Config)? {
            match k.as_str() {
                "w" => p.w = v,
                "v" => p.v = v,
                _ => return Err(PsaharaError::Config(format!("unknown incentive key {k:?}"))),
            }
        }
        Ok(p)
    }
}

#[derive(Args)]
struct EnvelopeArgs {
    /// Raw, piecewise or envelope JSON.
    #[arg(long, required_unless_present = "benchmark")]
    utility: Option<PathBuf>,
    /// Compose the incentive contract with this benchmark instead of reading a utility.
    #[arg(long, conflicts_with = "utility")]
    benchmark: Option<f64>,
    #[command(flatten)]
    incentive: IncentiveFlags,
    /// Verify domination and concavity on a grid with this step.
    #[arg(long)]
    grid_check: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long)]
    utility: PathBuf,
    /// Market JSON; defaults to the one-asset market on one year.
    #[arg(long)]
    market: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    x0: f64,
    /// State to evaluate, `t=..,xi=..`; repeatable.
    #[arg(long)]
    eval: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Policy JSON written by `policy`.
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 252)]
    steps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    antithetic: bool,
    /// Skip the Euler wealth scheme and the replication gap.
    #[arg(long)]
    no_euler: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorKind {
    Historical,
    Implied,
    Mle,
}

#[derive(Args)]
struct BacktestArgs {
    /// CSV with `date,asset1,...` adjusted closes.
    #[arg(long)]
    prices: PathBuf,
    #[command(flatten)]
    incentive: IncentiveFlags,
    #[arg(long, value_enum, default_value = "historical")]
    estimator: EstimatorKind,
    /// Put quotes `asset,spot,strike,rate,maturity,price` for the implied estimator.
    #[arg(long)]
    options: Option<PathBuf>,
    /// Annual risk-free rate.
    #[arg(long, default_value_t = 0.0)]
    rf: f64,
    /// Trading periods at the end of the panel; earlier rows are the estimation window.
    #[arg(long, default_value_t = 504)]
    trade_days: usize,
    #[arg(long, default_value_t = 1.0)]
    x0: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ImpliedVolArgs {
    #[arg(long = "S", required_unless_present = "quotes")]
    spot: Option<f64>,
    #[arg(long = "K", required_unless_present = "quotes")]
    strike: Option<f64>,
    #[arg(long = "r", default_value_t = 0.0)]
    rate: f64,
    #[arg(long = "T", required_unless_present = "quotes")]
    maturity: Option<f64>,
    #[arg(long, required_unless_present = "quotes")]
    price: Option<f64>,
    /// Quote CSV; reports every implied vol and the per-asset smile average.
    #[arg(long, conflicts_with_all = ["spot", "strike", "maturity", "price"])]
    quotes: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    Xi,
    T,
}

#[derive(Args)]
struct PlotArgs {
    /// Policy JSON; defaults to the demo envelope on the one-asset market.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "xi")]
    sweep: Sweep,
    /// `lo:hi` of the swept variable.
    #[arg(long, default_value = "1e-4:1e4", allow_hyphen_values = true)]
    range: String,
    #[arg(long, default_value_t = 200)]
    points: usize,
    /// Space the sweep geometrically.
    #[arg(long)]
    log: bool,
    /// Fixed time for a kernel sweep.
    #[arg(long, default_value_t = 0.0)]
    t: f64,
    /// Fixed kernel value for a time sweep.
    #[arg(long, default_value_t = 1.0)]
    xi: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    utility: PathBuf,
    /// Monotonicity grid `lo:hi:points`.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = match &e {
                PsaharaError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_NO_INPUT,
                _ => EXIT_VALIDATION,
            };
            let body = ErrorBody {
                error: e.kind(),
                message: e.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&body).unwrap_or_default());
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Envelope(a) => envelope(a),
        Command::Policy(a) => policy(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Backtest(a) => backtest(a),
        Command::ImpliedVol(a) => implied(a),
        Command::PlotData(a) => plot(a),
        Command::Validate(a) => validate_cmd(a),
    }
}

#[derive(Serialize)]
struct EnvelopeFile {
    #[serde(flatten)]
    result: EnvelopeResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_check: Option<GridCheckReport>,
}

fn envelope(a: EnvelopeArgs) -> Result<()> {
    let (raw, result) = match (&a.utility, a.benchmark) {
        (Some(path), _) => {
            let file = read_utility(path)?;
            let raw = match &file {
                UtilityFile::Raw(r) => r.clone(),
                UtilityFile::Piecewise(u) => u.to_raw(),
                UtilityFile::Envelope(e) => e.envelope.to_raw(),
            };
            (raw, file.into_envelope()?)
        }
        (None, Some(b)) => {
            let u = a.incentive.params(b)?.composed_utility()?;
            (u.to_raw(), concave_envelope_of(&u)?)
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    let grid_check = a
        .grid_check
        .map(|step| grid_check(&raw, &result.envelope, step))
        .transpose()?;
    emit_json(a.out.as_ref(), &EnvelopeFile { result, grid_check })
}

#[derive(Serialize)]
struct Evaluation {
    t: f64,
    xi: f64,
    wealth: WealthComponents,
    portfolio: PortfolioTerms,
}

#[derive(Serialize)]
struct Limits {
    small_kernel: Vec<f64>,
    large_kernel: Vec<f64>,
}

#[derive(Serialize)]
struct PolicyFile<'a> {
    #[serde(flatten)]
    policy: &'a OptimalPolicy,
    #[serde(skip_serializing_if = "Option::is_none")]
    limits: Option<Limits>,
    evaluations: Vec<Evaluation>,
}

fn parse_state(s: &str) -> Result<(f64, f64)> {
    let mut t = None;
    let mut xi = None;
    for (k, v) in key_values(s).map_err(PsaharaError::Config)? {
        match k.as_str() {
            "t" => t = Some(v),
            "xi" => xi = Some(v),
            _ => return Err(PsaharaError::Config(format!("unknown state key {k:?}"))),
        }
    }
    match (t, xi) {
        (Some(t), Some(xi)) => Ok((t, xi)),
        _ => Err(PsaharaError::Config(format!(
            "--eval {s:?} needs t= and xi="
        ))),
    }
}

fn policy(a: PolicyArgs) -> Result<()> {
    let env = read_utility(&a.utility)?.into_envelope()?.envelope;
    let market = match &a.market {
        Some(p) => read_market(p)?,
        None => scalar_market(1.0)?,
    };
    let p = OptimalPolicy::solve(env, market, a.x0)?;
    let evaluations = a
        .eval
        .iter()
        .map(|s| {
            let (t, xi) = parse_state(s)?;
            Ok(Evaluation {
                t,
                xi,
                wealth: p.wealth_components(t, xi)?,
                portfolio: p.portfolio(t, xi)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let limits = p.asymptotic_limits(0.0).ok().map(|(s, l)| Limits {
        small_kernel: s.iter().copied().collect(),
        large_kernel: l.iter().copied().collect(),
    });
    emit_json(
        a.out.as_ref(),
        &PolicyFile {
            policy: &p,
            limits,
            evaluations,
        },
    )
}

fn read_policy(path: &Path) -> Result<OptimalPolicy> {
    Ok(serde_json::from_value(io::read_json(path)?)?)
}

#[derive(Serialize)]
struct SimFile<'a> {
    #[serde(flatten)]
    result: &'a SimResult,
    martingale: MartingaleReport,
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let p = read_policy(&a.policy)?;
    let mut cfg = SimConfig::new(a.paths, a.steps, a.seed);
    cfg.antithetic = a.antithetic;
    cfg.euler = !a.no_euler;
    let result = simulate(&p, &cfg)?;
    let martingale = martingale_check(&result);
    emit_json(
        a.out.as_ref(),
        &SimFile {
            result: &result,
            martingale,
        },
    )
}

#[derive(Serialize)]
struct BacktestFile {
    estimator: &'static str,
    estimation_window: (String, String),
    params: IncentiveParams,
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    y_star: f64,
    report: BacktestReport,
}

fn backtest(a: BacktestArgs) -> Result<()> {
    let panel = PricePanel::from_csv(io::open(&a.prices)?)?;
    let n = panel.len();
    if a.trade_days == 0 || a.trade_days + 3 > n {
        return Err(PsaharaError::Config(format!(
            "{n} price rows cannot hold {} trading periods and an estimation window",
            a.trade_days
        )));
    }
    let split = n - a.trade_days - 1;
    let window = panel.slice(0, split + 1)?;
    let trade = panel.slice(split, n)?;
    let est = match a.estimator {
        EstimatorKind::Historical => Estimator::Historical,
        EstimatorKind::Mle => Estimator::Mle,
        EstimatorKind::Implied => {
            let path = a.options.as_ref().ok_or_else(|| {
                PsaharaError::Config("--estimator implied needs --options".into())
            })?;
            Estimator::Implied(read_quotes(io::open(path)?)?)
        }
    };
    let h = 1.0 / TRADING_DAYS;
    let horizon = a.trade_days as f64 * h;
    let fitted = fit_market(&window, h, a.rf, horizon, &est)?;
    let params = a.incentive.params((a.rf * horizon).exp())?;
    let policy = IncentivePolicy::solve(params, fitted.market.clone(), a.x0)?;
    let report = run_backtest(&policy, &trade, h)?;
    let sigma = &fitted.vol.sigma;
    emit_json(
        a.out.as_ref(),
        &BacktestFile {
            estimator: est.name(),
            estimation_window: (window.dates[0].clone(), window.dates[split].clone()),
            params,
            mu: fitted.mu.iter().copied().collect(),
            sigma: (0..sigma.nrows())
                .map(|i| sigma.row(i).iter().copied().collect())
                .collect(),
            y_star: policy.y_star(),
            report,
        },
    )
}

#[derive(Serialize)]
struct QuoteVol {
    asset: String,
    strike: f64,
    implied_vol: f64,
}

#[derive(Serialize)]
struct SmileFile {
    quotes: Vec<QuoteVol>,
    smile_average: BTreeMap<String, f64>,
}

fn implied(a: ImpliedVolArgs) -> Result<()> {
    if let Some(path) = &a.quotes {
        let quotes = read_quotes(io::open(path)?)?;
        let mut by_asset: BTreeMap<String, Vec<_>> = BTreeMap::new();
        let mut vols = Vec::with_capacity(quotes.len());
        for q in &quotes {
            vols.push(QuoteVol {
                asset: q.asset.clone(),
                strike: q.strike,
                implied_vol: implied_vol(q.price, q.spot, q.strike, q.rate, q.maturity)?,
            });
            by_asset.entry(q.asset.clone()).or_default().push(q.clone());
        }
        let smile_average = by_asset
            .iter()
            .map(|(k, qs)| Ok((k.clone(), smile_average(qs)?)))
            .collect::<Result<_>>()?;
        return emit_json(
            a.out.as_ref(),
            &SmileFile {
                quotes: vols,
                smile_average,
            },
        );
    }
    let (Some(s), Some(k), Some(t), Some(p)) = (a.spot, a.strike, a.maturity, a.price) else {
        unreachable!("clap requires the quote flags")
    };
    let v = implied_vol(p, s, k, a.rate, t)?;
    emit_json(a.out.as_ref(), &BTreeMap::from([("implied_vol", v)]))
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || PsaharaError::Config(format!("--range {s:?} is not lo:hi"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo < hi) {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn sweep_points(lo: f64, hi: f64, n: usize, log: bool) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(PsaharaError::Config("--points must be at least 2".into()));
    }
    if log && !(lo > 0.0) {
        return Err(PsaharaError::Config("--log needs a positive range".into()));
    }
    Ok((0..n)
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            if log {
                (lo.ln() + f * (hi.ln() - lo.ln())).exp()
            } else {
                lo + f * (hi - lo)
            }
        })
        .collect())
}

/// Shortest text that parses back to `v`.
fn csv_number(v: f64) -> String {
    if v.is_finite() {
        serde_json::Number::from_f64(v).map_or_else(|| v.to_string(), |n| n.to_string())
    } else {
        v.to_string()
    }
}

fn plot(a: PlotArgs) -> Result<()> {
    let p = match &a.policy {
        Some(path) => read_policy(path)?,
        None => {
            let env = concave_envelope(&discontinuous_demo())?.envelope;
            OptimalPolicy::solve(env, scalar_market(1.0)?, 1.0)?
        }
    };
    let (lo, hi) = parse_range(&a.range)?;
    let xs = sweep_points(lo, hi, a.points, a.log)?;
    let m = p.market().m();
    let asset_cols = |name: &str| -> Vec<String> {
        if m == 1 {
            vec![name.to_string()]
        } else {
            (1..=m).map(|j| format!("{name}_{j}")).collect()
        }
    };
    let mut header = vec![match a.sweep {
        Sweep::Xi => "xi".to_string(),
        Sweep::T => "t".to_string(),
    }];
    header.extend(["X_total", "X_D", "X_B", "X_R", "X_Rbar"].map(String::from));
    for name in ["pi_1", "pi_2", "pi_3", "pi_4", "pi_over_X"] {
        header.extend(asset_cols(name));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(PsaharaError::from)?;
    for &x in &xs {
        let (t, xi) = match a.sweep {
            Sweep::Xi => (a.t, x),
            Sweep::T => (x, a.xi),
        };
        let c = p.wealth_components(t, xi)?;
        let terms = p.portfolio(t, xi)?;
        let mut row = vec![x, c.total, c.sum_d, c.sum_b, c.sum_r, c.sum_rbar];
        for v in [&terms.pi1, &terms.pi2, &terms.pi3, &terms.pi4] {
            row.extend(v.iter().copied());
        }
        row.extend(terms.total.iter().map(|v| v / c.total));
        w.write_record(row.iter().map(|v| csv_number(*v)))
            .map_err(PsaharaError::from)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| PsaharaError::Data(e.to_string()))?;
    emit(a.out.as_ref(), &String::from_utf8_lossy(&bytes))
}

fn parse_grid(s: &str) -> Result<GridSpec> {
    let bad = || PsaharaError::Config(format!("--grid {s:?} is not lo:hi:points"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let points: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(lo < hi) || points < 2 {
        return Err(bad());
    }
    Ok(GridSpec { lo, hi, points })
}

fn validate_cmd(a: ValidateArgs) -> Result<()> {
    let grid = a.grid.as_deref().map(parse_grid).transpose()?;
    let report = match read_utility(&a.utility)? {
        UtilityFile::Raw(raw) => validate(&raw, grid),
        UtilityFile::Piecewise(u) => validate(&u, grid),
        UtilityFile::Envelope(EnvelopeResult { envelope, .. }) => validate(&envelope, grid),
    };
    emit_json(a.out.as_ref(), &report)
}
