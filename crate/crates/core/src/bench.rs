//! Timing of cached partial-update solving against full re-canonicalization
//! per solve, on identical parameter sequences.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::ast::{Problem, Values};
use crate::canon::{canonicalize, AffineMap, CanonError};
use crate::codegen::{generate, CodegenError, GenConfig};
use crate::pipeline::{solve_full, CachedSolver, PipelineError};
use crate::solver::Settings;
use crate::zoo::{backtest, build_mpc, build_portfolio, simulate_mpc, MpcModel, PortfolioCosts, SimTrace, ZooError};

pub const MPC_HORIZONS: [usize; 5] = [6, 12, 18, 30, 60];
pub const PORTFOLIO_SIZES: [usize; 5] = [10, 20, 40, 60, 100];
/// Per-entry agreement required between the two paths.
pub const AGREEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("repeats must be at least 3, got {0}")]
    TooFewRepeats(usize),
    #[error("no sizes requested")]
    NoSizes,
    #[error("size {size}: paths disagree at step {step} by {diff:e}")]
    Disagreement { size: usize, step: usize, diff: f64 },
    #[error(transparent)]
    Zoo(#[from] ZooError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Canon(#[from] CanonError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BenchFamily {
    /// Sizes are horizons H.
    Mpc,
    /// Sizes are asset counts N.
    Portfolio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub family: BenchFamily,
    pub sizes: Vec<usize>,
    /// Solves per repeat (simulation steps or back-test periods).
    pub steps: usize,
    pub repeats: usize,
    /// Leading solves of every repeat left out of the statistics.
    pub warmup: usize,
    pub seed: u64,
    pub settings: Settings,
}

impl BenchConfig {
    pub fn new(family: BenchFamily, sizes: Vec<usize>) -> BenchConfig {
        let mut settings = Settings::default().with_eps(1e-8);
        // the risk terms are O(1e-2); with the default rho the primal
        // residual stalls just above 1e-7 on some back-test periods
        if family == BenchFamily::Portfolio {
            settings.rho = 3.0;
        }
        BenchConfig {
            family,
            sizes,
            steps: 500,
            repeats: 3,
            warmup: 5,
            seed: 0,
            settings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub mean_ns: f64,
    pub median_ns: u64,
    pub p95_ns: u64,
    pub samples: usize,
}

impl Timing {
    pub fn from_samples(mut ns: Vec<u64>) -> Timing {
        ns.sort_unstable();
        let n = ns.len();
        if n == 0 {
            return Timing {
                mean_ns: 0.0,
                median_ns: 0,
                p95_ns: 0,
                samples: 0,
            };
        }
        let median = if n % 2 == 1 {
            ns[n / 2]
        } else {
            (ns[n / 2 - 1] + ns[n / 2]) / 2
        };
        // nearest-rank percentile
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Timing {
            mean_ns: ns.iter().map(|&v| v as f64).sum::<f64>() / n as f64,
            median_ns: median,
            p95_ns: ns[rank - 1],
            samples: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchEntry {
    pub size: usize,
    pub variables: usize,
    pub steps: usize,
    pub full: Timing,
    pub cached: Timing,
    /// `full.median / cached.median`.
    pub speedup: f64,
    pub max_disagreement: f64,
    pub factorizations_cached: usize,
    pub generate_ns: u64,
    pub source_bytes: usize,
    pub static_data_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub family: BenchFamily,
    pub seed: u64,
    pub repeats: usize,
    pub warmup: usize,
    pub entries: Vec<BenchEntry>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "family,size,variables,steps,full_mean_ns,full_median_ns,full_p95_ns,cached_mean_ns,cached_median_ns,cached_p95_ns,speedup,factorizations,generate_ns,source_bytes,static_data_bytes\n",
        );
        for e in &self.entries {
            s.push_str(&format!(
                "{:?},{},{},{},{:.0},{},{},{:.0},{},{},{:.4},{},{},{},{}\n",
                self.family,
                e.size,
                e.variables,
                e.steps,
                e.full.mean_ns,
                e.full.median_ns,
                e.full.p95_ns,
                e.cached.mean_ns,
                e.cached.median_ns,
                e.cached.p95_ns,
                e.speedup,
                e.factorizations_cached,
                e.generate_ns,
                e.source_bytes,
                e.static_data_bytes
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BreakEven {
    Solves(u64),
    Unbounded,
}

/// Smallest `k` with `onetime + k * t_cached <= k * t_full`, from the
/// median per-solve times of `entry`.
pub fn break_even(entry: &BenchEntry, onetime: Duration) -> BreakEven {
    break_even_ns(entry.full.median_ns, entry.cached.median_ns, onetime.as_nanos() as u64)
}

pub fn break_even_ns(t_full: u64, t_cached: u64, onetime: u64) -> BreakEven {
    if t_full <= t_cached {
        return BreakEven::Unbounded;
    }
    let gap = t_full - t_cached;
    BreakEven::Solves(onetime.div_ceil(gap).max(1))
}

/// `(parameter index, stored values)` written before one cached solve.
type ParamUpdates = Vec<(usize, Vec<f64>)>;

fn values_from_theta(cmap: &AffineMap, theta: &[f64]) -> Values {
    let mut v = Values::new();
    for (k, name) in cmap.names.iter().enumerate() {
        let b = cmap.layout.block(k);
        let dense = cmap.layout.scatter(k, &theta[b.offset..b.offset + b.len()]);
        v.insert(name.clone(), DMatrix::from_column_slice(b.rows, b.cols, &dense));
    }
    v
}

fn reference_trace(cfg: &BenchConfig, size: usize) -> Result<(Problem, SimTrace), BenchError> {
    Ok(match cfg.family {
        BenchFamily::Mpc => {
            let fam = build_mpc(size, 8)?;
            let model = MpcModel::quadcopter(0.1);
            let z0 = crate::zoo::random_state(cfg.seed);
            let t = simulate_mpc(&fam, &model, &model.a, &model.b, &z0, cfg.steps, cfg.settings)?;
            (fam.problem, t)
        }
        BenchFamily::Portfolio => {
            let fam = build_portfolio(size)?;
            let t = backtest(&fam, &PortfolioCosts::default(), cfg.steps, cfg.seed, cfg.settings)?;
            (fam.problem, t)
        }
    })
}

fn bench_size(cfg: &BenchConfig, size: usize) -> Result<BenchEntry, BenchError> {
    let (problem, trace) = reference_trace(cfg, size)?;
    let start = Instant::now();
    let (canon, cmap, rmap, deps) = canonicalize(&problem)?;
    let bundle = generate(&canon, &cmap, &rmap, &deps, &GenConfig::new("bench"))?;
    let generate_ns = start.elapsed().as_nanos() as u64;

    // the cached workspace starts from step 0's parameters, so step 0 writes
    // nothing
    let seq: Vec<(Values, ParamUpdates)> = trace
        .steps
        .iter()
        .map(|s| {
            let upd = s
                .updated
                .iter()
                .filter(|_| s.step > 0)
                .filter_map(|n| cmap.param_index(n))
                .map(|k| {
                    let b = cmap.layout.block(k);
                    (k, s.theta[b.offset..b.offset + b.len()].to_vec())
                })
                .collect();
            (values_from_theta(&cmap, &s.theta), upd)
        })
        .collect();

    let mut full_ns = Vec::new();
    let mut cached_ns = Vec::new();
    let mut max_diff = 0.0f64;
    let mut factorizations = 0;
    for _ in 0..cfg.repeats {
        let mut cs = CachedSolver::from_parts(
            canon.clone(),
            cmap.clone(),
            rmap.clone(),
            deps.clone(),
            trace.steps[0].theta.clone(),
            cfg.settings,
        )?;
        for (step, (values, upd)) in seq.iter().enumerate() {
            let t0 = Instant::now();
            let full = solve_full(&problem, values, cfg.settings)?;
            let t1 = Instant::now();
            for (k, stored) in upd {
                cs.set_param_stored(*k, stored)?;
            }
            let cached = cs.solve()?;
            let t2 = Instant::now();
            let diff = full
                .x
                .iter()
                .zip(&cached.x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if diff > AGREEMENT_TOL || full.x.len() != cached.x.len() {
                return Err(BenchError::Disagreement { size, step, diff });
            }
            max_diff = max_diff.max(diff);
            if step >= cfg.warmup {
                full_ns.push((t1 - t0).as_nanos() as u64);
                cached_ns.push((t2 - t1).as_nanos() as u64);
            }
        }
        factorizations = cs.factorizations();
    }
    let full = Timing::from_samples(full_ns);
    let cached = Timing::from_samples(cached_ns);
    Ok(BenchEntry {
        size,
        variables: problem.variable_count(),
        steps: cfg.steps,
        speedup: full.median_ns as f64 / cached.median_ns.max(1) as f64,
        full,
        cached,
        max_disagreement: max_diff,
        factorizations_cached: factorizations,
        generate_ns,
        source_bytes: bundle.manifest.total_bytes,
        static_data_bytes: bundle.manifest.static_data_bytes,
    })
}

/// Run both paths for every size. A disagreement beyond
/// [`AGREEMENT_TOL`] aborts the run without timings.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    if cfg.repeats < 3 {
        return Err(BenchError::TooFewRepeats(cfg.repeats));
    }
    if cfg.sizes.is_empty() {
        return Err(BenchError::NoSizes);
    }
    let entries = cfg
        .sizes
        .iter()
        .map(|&s| bench_size(cfg, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BenchReport {
        family: cfg.family,
        seed: cfg.seed,
        repeats: cfg.repeats,
        warmup: cfg.warmup,
        entries,
    })
}
