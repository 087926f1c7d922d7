use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mivsps::config::{PlanConfig, SystemConfig};
use mivsps::eoa::outer_approximation;
use mivsps::mc::{self, CoverageReport, Method};
use mivsps::{io, Error, SpsRegion};

#[derive(Parser)]
#[command(name = "mivsps", version, about = "Finite-sample confidence regions for closed-loop state-space models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// System config (simulate, indicator, eoa) or experiment plan (others).
    #[arg(long)]
    config: PathBuf,
    /// Output file, or output directory for `simulate`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed of the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "SPS_THREADS")]
    threads: Option<usize>,
    /// Suppress the per-row summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory; writes trajectory, regression data, truth and a pinned config.
    Simulate(Common),
    /// Evaluate the SPS indicator at a parameter matrix (default: the IV estimate).
    Indicator {
        #[command(flatten)]
        common: Common,
        /// CSV holding the (d_x + d_in) x d_x parameter matrix.
        #[arg(long)]
        theta: Option<PathBuf>,
    },
    /// Compute the ellipsoidal outer approximation.
    Eoa(Common),
    /// Coverage study over an experiment plan.
    Coverage(Common),
    /// Coverage as a function of the exploitation rate.
    SweepEpsilon(Common),
    /// Coverage and median radius as functions of the sample size.
    SweepN(Common),
    /// Time the matrix-variate and vectorized outer approximations.
    Bench(Common),
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Config(msg),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn load_system(c: &Common) -> std::result::Result<SystemConfig, Failure> {
    let mut cfg = SystemConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.mode().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn load_plan(c: &Common) -> std::result::Result<mc::ExperimentPlan, Failure> {
    let mut plan = PlanConfig::load(&c.config)?.to_plan()?;
    if let Some(seed) = c.seed {
        plan.seed = seed;
    }
    Ok(plan)
}

fn require_out(c: &Common) -> std::result::Result<&Path, Failure> {
    c.out.as_deref().ok_or_else(|| Failure::Config("--out is required for this command".into()))
}

fn simulate(c: &Common) -> Outcome {
    let cfg = load_system(c)?;
    let dir = require_out(c)?;
    let trial = cfg.draw()?;
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    io::write_trajectory(&dir.join("trajectory.csv"), &trial.trajectory)?;
    io::write_regression(dir, &trial.data)?;
    io::write_theta(&dir.join("truth.csv"), &trial.truth.0)?;
    let pinned = SystemConfig::from_system(&trial.spec, cfg.n, cfg.seed, cfg.mode()?, cfg.sps);
    let text = pinned.to_text()?;
    std::fs::write(dir.join("system.toml"), text).map_err(|e| Failure::Runtime(e.to_string()))?;
    if !c.quiet {
        println!(
            "simulated n={} d_x={} d_u={} epsilon={} noise={} instrument_condition={:e}",
            cfg.n,
            trial.spec.d_x(),
            trial.spec.d_u(),
            trial.spec.epsilon,
            trial.spec.noise.tag(),
            trial.data.instrument_condition()?
        );
    }
    Ok(())
}

fn region(cfg: &SystemConfig) -> std::result::Result<SpsRegion, Failure> {
    let trial = cfg.draw()?;
    Ok(SpsRegion::init(&trial.data, cfg.sps_config()?)?)
}

fn indicator(c: &Common, theta: Option<&Path>) -> Outcome {
    let cfg = load_system(c)?;
    let region = region(&cfg)?;
    let theta = match theta {
        Some(p) => io::read_theta(p)?,
        None => region.center().clone(),
    };
    let eval = region.evaluate(&theta)?;
    let cfg_sps = region.config();
    let inside = eval.rank <= cfg_sps.m - cfg_sps.q;
    println!("inside={inside} rank={} m={} q={}", eval.rank, cfg_sps.m, cfg_sps.q);
    Ok(())
}

fn eoa(c: &Common) -> Outcome {
    let cfg = load_system(c)?;
    let out = require_out(c)?;
    let region = region(&cfg)?;
    let ell = outer_approximation(&region)?;
    io::write_ellipsoid(out, &ell)?;
    if !c.quiet {
        println!(
            "radius_sq={} unbounded={} m={} q={}",
            io::fmt_f64(ell.radius_sq),
            ell.unbounded,
            region.config().m,
            region.config().q
        );
    }
    Ok(())
}

fn print_report(report: &CoverageReport) {
    for row in &report.rows {
        println!(
            "dim={} method={} mode={} epsilon={} n={} p_hat={:.3} valid={}/{} median_radius_sq={}",
            row.dims.d_x,
            io::method_label(row),
            row.mode.as_str(),
            row.epsilon,
            row.n,
            row.p_hat(),
            row.valid(),
            row.s,
            io::fmt_f64(row.median_radius_sq)
        );
    }
}

fn coverage(c: &Common, run: fn(&mc::ExperimentPlan) -> mivsps::Result<CoverageReport>) -> Outcome {
    let plan = load_plan(c)?;
    let out = require_out(c)?;
    let report = run(&plan)?;
    io::write_report(out, &report)?;
    if !c.quiet {
        print_report(&report);
        if plan.sample_sizes.len() > 1 && plan.methods.contains(&Method::MivEoa) {
            println!("radius_decreasing={}", mc::radius_decreases_with_n(&report, Method::MivEoa));
        }
    }
    Ok(())
}

fn bench(c: &Common) -> Outcome {
    let plan = load_plan(c)?;
    let out = require_out(c)?;
    let rows = mc::run_benchmark(&plan.dims, plan.sample_sizes[0], plan.s, plan.sps, plan.seed)?;
    io::write_benchmark(out, &rows)?;
    if !c.quiet {
        for r in &rows {
            println!(
                "dim={} params={} blocks={}/{} relative_time={:.3}",
                r.dims.d_x,
                r.params,
                r.matrix_block,
                r.vectorized_block,
                r.relative_time()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Simulate(c)
        | Command::Indicator { common: c, .. }
        | Command::Eoa(c)
        | Command::Coverage(c)
        | Command::SweepEpsilon(c)
        | Command::SweepN(c)
        | Command::Bench(c) => c,
    };
    if let Some(threads) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Indicator { common, theta } => indicator(common, theta.as_deref()),
        Command::Eoa(c) => eoa(c),
        Command::Coverage(c) => coverage(c, mc::run_coverage),
        Command::SweepEpsilon(c) => coverage(c, mc::run_epsilon_sweep),
        Command::SweepN(c) => coverage(c, mc::run_sample_sweep),
        Command::Bench(c) => bench(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
