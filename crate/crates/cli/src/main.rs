use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use qpgen::ast::{matrix_to_json, parse_problem, parse_values, Problem};
use qpgen::bench::{break_even, run_bench, BenchConfig, BenchFamily};
use qpgen::canon::{canonicalize, report_json};
use qpgen::codegen::{emit_report, generate, run_harness, FixtureSet, FloatWidth, GenConfig};
use qpgen::pipeline::CachedSolver;
use qpgen::solver::Settings;
use qpgen::zoo::{
    backtest, build_mpc, build_nnls, build_portfolio, random_state, simulate_mpc, MpcModel, PortfolioCosts, SimTrace,
};

#[derive(Parser)]
#[command(name = "qpgen", version, about = "Parametrized QP canonicalization, solving and C code generation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Mpc,
    Portfolio,
    Nnls,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the canonical structure (patterns, C, R) of a problem file as JSON.
    Canonicalize { problem: PathBuf },
    /// Solve one instance and print the solution as JSON.
    Solve {
        problem: PathBuf,
        values: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 20000)]
        max_iter: usize,
    },
    /// Emit a C source bundle for a problem file or a built-in family.
    Generate {
        /// Problem file; alternatively use --family.
        #[arg(long, conflicts_with = "family")]
        problem: Option<PathBuf>,
        #[arg(long, value_enum)]
        family: Option<Family>,
        /// MPC horizon, portfolio asset count, or NNLS m (n = m/2 rounded up).
        #[arg(long, default_value_t = 6)]
        size: usize,
        /// Parameter values compiled in as the initial staging area.
        #[arg(long)]
        values: Option<PathBuf>,
        #[arg(long, default_value = "cpg")]
        prefix: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_parser = ["32", "64"], default_value = "64")]
        float: String,
        /// Record this many simulation steps as replay fixtures (built-in families).
        #[arg(long)]
        fixtures: Option<usize>,
        #[arg(long, default_value_t = 1e-7)]
        eps: f64,
        /// ADMM step size; portfolio instances converge much faster near 3.
        #[arg(long, default_value_t = 0.1)]
        rho: f64,
        /// Hard iteration cap compiled into the solver.
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// C compiler used for object sizes in the report.
        #[arg(long)]
        cc: Option<String>,
    },
    /// Closed-loop MPC simulation; writes the trace as CSV.
    SimulateMpc {
        #[arg(long, default_value_t = 6)]
        horizon: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Portfolio back-test on a synthetic market; writes the trace as CSV.
    Backtest {
        #[arg(long, default_value_t = 10)]
        assets: usize,
        #[arg(long, default_value_t = 500)]
        periods: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cached versus full-pipeline timing; CSV to --csv, JSON summary to stdout.
    Bench {
        #[arg(long, value_enum, default_value = "portfolio")]
        family: Family,
        #[arg(long, value_delimiter = ',', default_value = "10,100")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// One-time generation plus compile cost for the break-even count;
        /// defaults to the measured generation time.
        #[arg(long)]
        onetime_ms: Option<f64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compile a bundle with fixtures, replay them and print the JSON report.
    RunHarness {
        bundle_dir: PathBuf,
        #[arg(long, default_value = "cc")]
        cc: String,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_problem(path: &Path) -> Result<Problem> {
    Ok(parse_problem(&read(path)?)?)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn cmd_solve(problem: &Path, values: &Path, eps: f64, max_iter: usize) -> Result<()> {
    let p = load_problem(problem)?;
    let vals = parse_values(&read(values)?, &p)?;
    let mut settings = Settings::default().with_eps(eps);
    settings.max_iter = max_iter;
    let mut cs = CachedSolver::new(&p, &vals, settings)?;
    let res = cs.solve()?;
    let vars = cs.values()?;
    let mut x = serde_json::Map::new();
    for v in &p.variables {
        x.insert(v.name.clone(), matrix_to_json(&vars[&v.name]));
    }
    print_json(&json!({
        "status": res.solution.status,
        "status_code": res.solution.status.code(),
        "objective": p.objective_value(&vars, &vals)?,
        "iterations": res.solution.iterations,
        "primal_residual": res.solution.primal_res,
        "dual_residual": res.solution.dual_res,
        "x": x,
    }))
}

/// Problem, initial parameter vector and optional recorded trace for a
/// built-in family.
fn zoo_family(family: Family, size: usize, steps: Option<usize>, seed: u64, settings: Settings) -> Result<(Problem, Option<SimTrace>)> {
    Ok(match family {
        Family::Mpc => {
            let fam = build_mpc(size, 8)?;
            let model = MpcModel::quadcopter(0.1);
            let n = steps.unwrap_or(1);
            let t = simulate_mpc(&fam, &model, &model.a, &model.b, &random_state(seed), n, settings)?;
            (fam.problem, Some(t))
        }
        Family::Portfolio => {
            let fam = build_portfolio(size)?;
            let t = backtest(&fam, &PortfolioCosts::default(), steps.unwrap_or(1), seed, settings)?;
            (fam.problem, Some(t))
        }
        Family::Nnls => {
            if steps.is_some() {
                bail!("fixtures for nnls need recorded updates; use the library API");
            }
            (build_nnls(size, size.div_ceil(2))?.problem, None)
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    problem: Option<&Path>,
    family: Option<Family>,
    size: usize,
    values: Option<&Path>,
    prefix: &str,
    out: &Path,
    float: &str,
    fixtures: Option<usize>,
    eps: f64,
    rho: f64,
    max_iter: Option<usize>,
    seed: u64,
    cc: Option<&str>,
) -> Result<()> {
    let mut settings = Settings::default().with_eps(eps);
    settings.rho = rho;
    let (p, trace) = match (problem, family) {
        (Some(path), _) => {
            if fixtures.is_some() {
                bail!("--fixtures requires --family");
            }
            (load_problem(path)?, None)
        }
        (None, Some(f)) => zoo_family(f, size, fixtures, seed, settings)?,
        (None, None) => bail!("give --problem or --family"),
    };
    let (canon, cmap, rmap, deps) = canonicalize(&p)?;
    let mut cfg = GenConfig::new(prefix);
    cfg.settings = settings;
    cfg.max_iter_cap = max_iter;
    cfg.float = if float == "32" { FloatWidth::F32 } else { FloatWidth::F64 };
    cfg.output_dir = Some(out.to_path_buf());
    if let Some(v) = values {
        cfg.initial_theta = Some(cmap.flatten(&parse_values(&read(v)?, &p)?)?);
    } else if let Some(t) = &trace {
        cfg.initial_theta = t.steps.first().map(|s| s.theta.clone());
    }
    if let (Some(_), Some(t)) = (fixtures, &trace) {
        cfg.emit_fixtures = true;
        cfg.fixtures = Some(FixtureSet::from_trace(&canon, &cmap, &rmap, &deps, settings, t)?);
    }
    let bundle = generate(&canon, &cmap, &rmap, &deps, &cfg)?;
    bundle.write_to(out)?;
    print_json(&serde_json::to_value(emit_report(&bundle, cc))?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    family: Family,
    sizes: Vec<usize>,
    steps: usize,
    repeats: usize,
    warmup: usize,
    seed: u64,
    onetime_ms: Option<f64>,
    csv: Option<&Path>,
) -> Result<()> {
    let family = match family {
        Family::Mpc => BenchFamily::Mpc,
        Family::Portfolio => BenchFamily::Portfolio,
        Family::Nnls => bail!("bench supports mpc and portfolio"),
    };
    let mut cfg = BenchConfig::new(family, sizes);
    cfg.steps = steps;
    cfg.repeats = repeats;
    cfg.warmup = warmup;
    cfg.seed = seed;
    let report = run_bench(&cfg)?;
    if let Some(path) = csv {
        std::fs::write(path, report.to_csv())?;
    }
    let entries: Vec<_> = report
        .entries
        .iter()
        .map(|e| {
            let onetime = match onetime_ms {
                Some(ms) => Duration::from_secs_f64(ms / 1e3),
                None => Duration::from_nanos(e.generate_ns),
            };
            json!({"entry": e, "onetime_ns": onetime.as_nanos() as u64, "break_even": break_even(e, onetime)})
        })
        .collect();
    print_json(&json!({
        "family": report.family,
        "seed": report.seed,
        "repeats": report.repeats,
        "warmup": report.warmup,
        "sizes": entries,
    }))
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Canonicalize { problem } => {
            let p = load_problem(&problem)?;
            let (c, a, r, d) = canonicalize(&p)?;
            print_json(&report_json(&c, &a, &r, &d))?;
        }
        Cmd::Solve {
            problem,
            values,
            eps,
            max_iter,
        } => cmd_solve(&problem, &values, eps, max_iter)?,
        Cmd::Generate {
            problem,
            family,
            size,
            values,
            prefix,
            out,
            float,
            fixtures,
            eps,
            rho,
            max_iter,
            seed,
            cc,
        } => cmd_generate(
            problem.as_deref(),
            family,
            size,
            values.as_deref(),
            &prefix,
            &out,
            &float,
            fixtures,
            eps,
            rho,
            max_iter,
            seed,
            cc.as_deref(),
        )?,
        Cmd::SimulateMpc {
            horizon,
            steps,
            seed,
            out,
        } => {
            let fam = build_mpc(horizon, 8)?;
            let model = MpcModel::quadcopter(0.1);
            let t = simulate_mpc(&fam, &model, &model.a, &model.b, &random_state(seed), steps, Settings::default())?;
            write_or_print(out.as_deref(), &t.to_csv())?;
        }
        Cmd::Backtest {
            assets,
            periods,
            seed,
            out,
        } => {
            let fam = build_portfolio(assets)?;
            let t = backtest(&fam, &PortfolioCosts::default(), periods, seed, Settings::default())?;
            write_or_print(out.as_deref(), &t.to_csv())?;
        }
        Cmd::Bench {
            family,
            sizes,
            steps,
            repeats,
            warmup,
            seed,
            onetime_ms,
            csv,
        } => cmd_bench(family, sizes, steps, repeats, warmup, seed, onetime_ms, csv.as_deref())?,
        Cmd::RunHarness { bundle_dir, cc } => {
            let rep = run_harness(&bundle_dir, &cc)?;
            println!("{}", serde_json::to_string(&rep)?);
            return Ok(if rep.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
    }
    Ok(ExitCode::SUCCESS)
}
