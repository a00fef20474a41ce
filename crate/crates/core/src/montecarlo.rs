//! Path simulation of the pricing kernel and the optimal wealth.
//!
//! `log xi` is stepped exactly. Wealth is recorded twice per path: by the
//! closed form evaluated at the simulated kernel, and by an Euler scheme on
//! the self-financing wealth equation driven by the same increments.

use crate::error::{PsaharaError, Result};
use crate::policy::Strategy;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Fractions of the horizon at which path averages are recorded.
pub const CHECKPOINTS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Exponent `2 + eps` of the integrability diagnostic.
const DIAGNOSTIC_POWER: f64 = 2.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    /// Also run the Euler wealth scheme (needs one portfolio evaluation per step).
    #[serde(default = "yes")]
    pub euler: bool,
}

fn yes() -> bool {
    true
}

impl SimConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        SimConfig {
            n_paths,
            n_steps,
            seed,
            antithetic: false,
            euler: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(PsaharaError::Config("need at least 2 paths".into()));
        }
        if self.n_steps < 1 {
            return Err(PsaharaError::Config("need at least 1 step".into()));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(PsaharaError::Config(
                "antithetic sampling needs an even path count".into(),
            ));
        }
        Ok(())
    }

    /// Independent sampling units: paths, or antithetic pairs.
    fn units(&self) -> usize {
        if self.antithetic {
            self.n_paths / 2
        } else {
            self.n_paths
        }
    }
}

/// Mean and standard error over independent sampling units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    fn from_units(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Estimate {
            mean,
            std_error: (var / n).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub t: f64,
    /// `xi_t X_t` with the closed-form wealth.
    pub deflated_wealth: Estimate,
    /// `xi_t X_t` with the Euler wealth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deflated_euler: Option<Estimate>,
    pub kernel: Estimate,
    pub mean_wealth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub max_pi_norm: f64,
    pub max_abs_wealth: f64,
    /// 5%, 50%, 95% path quantiles of `int |pi|^2.5 dt`.
    pub pi_power_integral_quantiles: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub x0: f64,
    pub horizon: f64,
    pub terminal_kernel: Vec<f64>,
    pub terminal_wealth: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal_wealth_euler: Option<Vec<f64>>,
    pub log_kernel_mean: f64,
    pub log_kernel_var: f64,
    pub checkpoints: Vec<Checkpoint>,
    /// Mean `|X_T(closed form) - X_T(Euler)|`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replication_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

struct PathOut {
    xi_t: f64,
    x_t: f64,
    x_euler: f64,
    /// per checkpoint: (xi, xi X, xi X_euler, X)
    marks: Vec<[f64; 4]>,
    max_pi: f64,
    pi_power: f64,
    max_abs_x: f64,
}

/// Steps at which checkpoints are recorded; coarse grids merge coincident ones.
fn checkpoint_steps(n_steps: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = CHECKPOINTS
        .iter()
        .map(|f| ((f * n_steps as f64).round() as usize).clamp(1, n_steps))
        .collect();
    steps.dedup();
    steps
}

fn run_path<S: Strategy + ?Sized>(
    strategy: &S,
    cfg: &SimConfig,
    normals: &[f64],
    sign: f64,
    marks_at: &[usize],
) -> Result<PathOut> {
    let market = strategy.market();
    let horizon = market.horizon();
    let q = market.q();
    let h = horizon / cfg.n_steps as f64;
    let sqrt_h = h.sqrt();
    let mut log_xi: f64 = 0.0;
    let mut x_euler = strategy.x0();
    let mut out = PathOut {
        xi_t: 1.0,
        x_t: strategy.x0(),
        x_euler,
        marks: Vec::with_capacity(marks_at.len()),
        max_pi: 0.0,
        pi_power: 0.0,
        max_abs_x: strategy.x0().abs(),
    };
    let mut mark = 0;
    let mut dw = DVector::zeros(q);
    for step in 0..cfg.n_steps {
        let t = h * step as f64;
        let t_next = if step + 1 == cfg.n_steps {
            horizon
        } else {
            h * (step + 1) as f64
        };
        for j in 0..q {
            dw[j] = sign * normals[step * q + j] * sqrt_h;
        }
        if cfg.euler {
            let (_, pi) = strategy.state(t, log_xi.exp())?;
            let r = market.rate(t);
            let excess = market.drift(t).map(|m| m - r);
            let vol = market.vol(t);
            x_euler += (r * x_euler + pi.dot(&excess)) * h + (vol.transpose() * &pi).dot(&dw);
            let norm = pi.norm();
            out.max_pi = out.max_pi.max(norm);
            out.pi_power += norm.powf(DIAGNOSTIC_POWER) * h;
            out.max_abs_x = out.max_abs_x.max(x_euler.abs());
        }
        let (mean, _) = market.kernel_terminal_law(t, t_next)?;
        log_xi += mean - market.theta_at(t).dot(&dw);
        if mark < marks_at.len() && marks_at[mark] == step + 1 {
            let xi = log_xi.exp();
            let x = if step + 1 == cfg.n_steps {
                strategy.terminal_wealth(xi)
            } else {
                strategy.state(t_next, xi)?.0
            };
            out.marks.push([xi, xi * x, xi * x_euler, x]);
            mark += 1;
        }
    }
    out.xi_t = log_xi.exp();
    out.x_t = strategy.terminal_wealth(out.xi_t);
    out.x_euler = x_euler;
    Ok(out)
}

fn pool() -> Result<Option<rayon::ThreadPool>> {
    match std::env::var("PSAHARA_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| {
                PsaharaError::Config(format!("PSAHARA_THREADS = {v:?} is not a count"))
            })?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| PsaharaError::Config(e.to_string()))?;
            Ok(Some(pool))
        }
        Err(_) => Ok(None),
    }
}

/// Runs `f` inside the pool sized by `PSAHARA_THREADS`, if set.
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(match pool()? {
        Some(p) => p.install(f),
        None => f(),
    })
}

/// Simulates `config.n_paths` kernel and wealth paths.
pub fn simulate<S: Strategy + ?Sized>(strategy: &S, config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let q = strategy.market().q();
    let marks_at = checkpoint_steps(config.n_steps);
    let per_path = config.n_steps * q;
    let unit_paths = if config.antithetic { 2 } else { 1 };
    let units: Vec<Result<Vec<PathOut>>> = with_thread_pool(|| {
        (0..config.units())
            .into_par_iter()
            .map(|u| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(u as u64);
                let normals: Vec<f64> = (0..per_path)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                (0..unit_paths)
                    .map(|k| {
                        run_path(
                            strategy,
                            config,
                            &normals,
                            if k == 0 { 1.0 } else { -1.0 },
                            &marks_at,
                        )
                    })
                    .collect()
            })
            .collect()
    })?;
    let units: Vec<Vec<PathOut>> = units.into_iter().collect::<Result<_>>()?;
    let horizon = strategy.market().horizon();
    let h = horizon / config.n_steps as f64;

    let unit_mean = |f: &dyn Fn(&PathOut) -> f64| -> Vec<f64> {
        units
            .iter()
            .map(|u| u.iter().map(f).sum::<f64>() / u.len() as f64)
            .collect()
    };
    let paths: Vec<&PathOut> = units.iter().flatten().collect();
    let checkpoints = marks_at
        .iter()
        .enumerate()
        .map(|(i, &step)| Checkpoint {
            step,
            t: if step == config.n_steps {
                horizon
            } else {
                h * step as f64
            },
            deflated_wealth: Estimate::from_units(&unit_mean(&|p| p.marks[i][1])),
            deflated_euler: config
                .euler
                .then(|| Estimate::from_units(&unit_mean(&|p| p.marks[i][2]))),
            kernel: Estimate::from_units(&unit_mean(&|p| p.marks[i][0])),
            mean_wealth: paths.iter().map(|p| p.marks[i][3]).sum::<f64>() / paths.len() as f64,
        })
        .collect();
    let n = paths.len() as f64;
    let logs: Vec<f64> = paths.iter().map(|p| p.xi_t.ln()).collect();
    let log_kernel_mean = logs.iter().sum::<f64>() / n;
    let log_kernel_var = logs
        .iter()
        .map(|l| (l - log_kernel_mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    let (replication_gap, diagnostics, euler) = if config.euler {
        let gap = paths.iter().map(|p| (p.x_t - p.x_euler).abs()).sum::<f64>() / n;
        let mut powers: Vec<f64> = paths.iter().map(|p| p.pi_power).collect();
        powers.sort_by(|a, b| a.total_cmp(b));
        let quantile = |f: f64| powers[((f * (powers.len() - 1) as f64).round()) as usize];
        let diag = Diagnostics {
            max_pi_norm: paths.iter().map(|p| p.max_pi).fold(0.0, f64::max),
            max_abs_wealth: paths.iter().map(|p| p.max_abs_x).fold(0.0, f64::max),
            pi_power_integral_quantiles: [quantile(0.05), quantile(0.5), quantile(0.95)],
        };
        (
            Some(gap),
            Some(diag),
            Some(paths.iter().map(|p| p.x_euler).collect()),
        )
    } else {
        (None, None, None)
    };
    Ok(SimResult {
        config: config.clone(),
        x0: strategy.x0(),
        horizon,
        terminal_kernel: paths.iter().map(|p| p.xi_t).collect(),
        terminal_wealth: paths.iter().map(|p| p.x_t).collect(),
        terminal_wealth_euler: euler,
        log_kernel_mean,
        log_kernel_var,
        checkpoints,
        replication_gap,
        diagnostics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleCheckpoint {
    pub t: f64,
    pub mean: f64,
    pub std_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub x0: f64,
    pub checkpoints: Vec<MartingaleCheckpoint>,
    pub passed: bool,
}

/// `|mean(xi_t X_t) - x0| < 3 SE` at every checkpoint.
pub fn martingale_check(result: &SimResult) -> MartingaleReport {
    let x0 = result.x0;
    let checkpoints: Vec<MartingaleCheckpoint> = result
        .checkpoints
        .iter()
        .map(|c| {
            let e = c.deflated_wealth;
            let gap = (e.mean - x0).abs();
            let passed = gap < 3.0 * e.std_error || gap <= 1e-12 * x0.abs().max(1.0);
            MartingaleCheckpoint {
                t: c.t,
                mean: e.mean,
                std_error: e.std_error,
                passed,
            }
        })
        .collect();
    let passed = checkpoints.iter().all(|c| c.passed);
    MartingaleReport {
        x0,
        checkpoints,
        passed,
    }
}
