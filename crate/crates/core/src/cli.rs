//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{beta_g_tradeoff, theorem_bound_variant, BoundInputs, BoundVariant};
use crate::config::{cluster_preset, RunConfig, CLUSTER_PRESETS};
use crate::engine::{StopRule, Trace};
use crate::error::{Error, Result};
use crate::run::{
    breakdown_table, build_workload, compare_rows, execute, execute_all, execute_trace, exit, parse_sweep, run_sweep,
    with_strategy, write_atomic, write_compare_csv, write_outcome, write_sweep,
};
use crate::strategy::StrategyKind;

#[derive(Debug, Parser)]
#[command(
    name = "halos",
    version,
    about = "Simulate hierarchical asynchronous local SGD and its baselines"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a trace and replay it; writes a report.
    Run(RunArgs),
    /// Run one config per value of a hyperparameter.
    Sweep(SweepArgs),
    /// Run several strategies on the same workload and cluster.
    Compare(CompareArgs),
    /// Replay a saved trace under a config.
    Replay(ReplayArgs),
    /// Evaluate the non-convex convergence bound.
    Bound(BoundArgs),
    /// Per-strategy compute / communication / stall fractions from timing alone.
    Breakdown(BreakdownArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run config.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Dotted-path override such as `strategy.k=16` or `beta_g=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory; defaults to `$HALOS_OUT_DIR`, then `output.dir`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<(RunConfig, PathBuf)> {
        let cfg = RunConfig::load(&self.config, &self.set)?;
        let dir = self.out.clone().unwrap_or_else(|| cfg.output_dir());
        Ok((cfg, dir))
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// `all`, or a comma-separated list of strategies to run instead of the configured one.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Sweep `axis=v1,v2,...` instead of a single run.
    #[arg(long)]
    pub sweep: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// `axis=v1,v2,...`, e.g. `beta_g=0.1,0.3,0.5,0.7,0.9`.
    #[arg(long)]
    pub sweep: String,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = "all")]
    pub strategy: String,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// NDJSON trace, optionally gzip-compressed (`.gz`).
    #[arg(long)]
    pub trace: PathBuf,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// Only evaluate `1/(x³(1−x)³)` at this momentum.
    #[arg(long)]
    pub tradeoff: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub f0_minus_fstar: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eta_0: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eta_m: f64,
    #[arg(long, default_value_t = 1000)]
    pub t: u64,
    #[arg(long, default_value_t = 0.5)]
    pub beta_g: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta_l: f64,
    #[arg(long, default_value_t = 1.0)]
    pub l: f64,
    #[arg(long, default_value_t = 1.0)]
    pub g: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0.0)]
    pub d_g2: f64,
    #[arg(long, default_value_t = 0.0)]
    pub d_l2: f64,
    /// Use `(1 − β_g²)` in the variance denominator.
    #[arg(long)]
    pub squared_global: bool,
}

#[derive(Debug, Args)]
pub struct BreakdownArgs {
    /// Cluster preset, used when no config is given.
    #[arg(long, default_value = "paper-default")]
    pub cluster: String,
    /// Take the cluster from this run config instead.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Simulated seconds per strategy.
    #[arg(long, default_value_t = 3600.0)]
    pub sim_time: f64,
    /// Also write `breakdown.csv` here.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

/// Runs the CLI and returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            crate::run::exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run(a) => match (a.sweep, a.strategy) {
            (Some(s), _) => sweep_cmd(&a.config, &s),
            (None, Some(s)) => compare_cmd(&a.config, &s),
            (None, None) => run_cmd(&a.config),
        },
        Command::Sweep(a) => sweep_cmd(&a.config, &a.sweep),
        Command::Compare(a) => compare_cmd(&a.config, &a.strategy),
        Command::Replay(a) => replay_cmd(&a),
        Command::Bound(a) => bound_cmd(&a),
        Command::Breakdown(a) => breakdown_cmd(&a),
    }
}

fn run_cmd(args: &ConfigArgs) -> Result<i32> {
    let (cfg, dir) = args.load()?;
    let out = execute(&cfg)?;
    write_outcome(&out, &dir)?;
    summarize(out.report(), &dir);
    Ok(if out.report().is_diverged() {
        exit::DIVERGED
    } else {
        exit::OK
    })
}

fn summarize(r: &crate::analysis::RunReport, dir: &Path) {
    match (&r.diverged, r.final_loss) {
        (Some(d), _) => println!("{}: diverged at seq {}: {}", r.strategy.name(), d.seq, d.reason),
        (None, Some(l)) => println!(
            "{}: final loss {l:.6} after {} global updates, {:.1} s simulated",
            r.strategy.name(),
            r.global_updates,
            r.end_time
        ),
        (None, None) => println!("{}: no loss recorded", r.strategy.name()),
    }
    println!("config {:016x} seed {} -> {}", r.config_hash, r.seed, dir.display());
}

fn parse_kinds(spec: &str) -> Result<Vec<StrategyKind>> {
    if spec == "all" {
        return Ok(StrategyKind::ALL.to_vec());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<StrategyKind>())
        .collect::<Result<Vec<_>>>()
}

fn compare_cmd(args: &ConfigArgs, strategies: &str) -> Result<i32> {
    let (cfg, dir) = args.load()?;
    let configs = parse_kinds(strategies)?
        .into_iter()
        .map(|k| with_strategy(&cfg, k))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = execute_all(&configs)?;
    for o in &outcomes {
        write_outcome(o, &dir.join(o.config.strategy.kind.name()))?;
    }
    let rows = compare_rows(&outcomes, cfg.target_loss);
    let mut buf = Vec::new();
    write_compare_csv(&rows, &mut buf)?;
    write_atomic(dir.join("comparison.csv"), &buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(exit::OK)
}

fn sweep_cmd(args: &ConfigArgs, spec: &str) -> Result<i32> {
    let (cfg, dir) = args.load()?;
    let (axis, values) = parse_sweep(spec)?;
    let (summary, outcomes) = run_sweep(&cfg, &axis, &values)?;
    for (o, v) in outcomes.iter().zip(&values) {
        write_outcome(o, &dir.join(format!("{axis}={v}")))?;
    }
    let path = write_sweep(&summary, &dir)?;
    print!("{}", std::fs::read_to_string(&path)?);
    if let Some(i) = summary.argmin {
        println!("best {axis} = {}", summary.rows[i].value);
    }
    Ok(exit::OK)
}

fn replay_cmd(args: &ReplayArgs) -> Result<i32> {
    let (cfg, dir) = args.config.load()?;
    let trace = Trace::read(&args.trace)?;
    let workload = build_workload(&cfg)?;
    let out = execute_trace(&cfg, trace, &workload)?;
    write_outcome(&out, &dir)?;
    summarize(out.report(), &dir);
    Ok(if out.report().is_diverged() {
        exit::DIVERGED
    } else {
        exit::OK
    })
}

fn bound_cmd(a: &BoundArgs) -> Result<i32> {
    if let Some(x) = a.tradeoff {
        println!("{}", beta_g_tradeoff(x)?);
        return Ok(exit::OK);
    }
    let b = BoundInputs {
        f0_minus_fstar: a.f0_minus_fstar,
        eta_0: a.eta_0,
        eta_m: a.eta_m,
        t: a.t,
        beta_g: a.beta_g,
        beta_l: a.beta_l,
        l: a.l,
        g: a.g,
        sigma2: a.sigma2,
        d_g2: a.d_g2,
        d_l2: a.d_l2,
    };
    let variant = if a.squared_global {
        BoundVariant::SquaredGlobal
    } else {
        BoundVariant::Stated
    };
    println!("{}", theorem_bound_variant(&b, variant)?);
    Ok(exit::OK)
}

fn breakdown_cmd(a: &BreakdownArgs) -> Result<i32> {
    let (cluster, seed) = match &a.config {
        Some(path) => {
            let cfg = RunConfig::load(path, &[])?;
            (cfg.cluster, cfg.seed)
        }
        None => (
            cluster_preset(&a.cluster).ok_or_else(|| {
                Error::config(
                    "cluster",
                    format!("unknown preset; known: {}", CLUSTER_PRESETS.join(", ")),
                )
            })?,
            0,
        ),
    };
    let rows = breakdown_table(&cluster, &StrategyKind::ALL, StopRule::SimTime(a.sim_time), seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "compute_fraction", "comm_fraction", "stall_fraction"])?;
    for (k, b) in &rows {
        w.write_record([
            k.name().to_string(),
            format!("{:.4}", b.compute_fraction),
            format!("{:.4}", b.comm_fraction),
            format!("{:.4}", b.stall_fraction),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    if let Some(dir) = &a.out {
        write_atomic(dir.join("breakdown.csv"), &bytes)?;
    }
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(exit::OK)
}
