//! End-to-end run orchestration and output files.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{sweep, time_to_loss, write_sweep_csv, RunReport, SweepSummary};
use crate::cluster::ClusterSpec;
use crate::config::RunConfig;
use crate::engine::{
    generate_trace, mean_breakdown, replay, runtime_breakdown, Replay, StopRule, TimingConfig, Trace, WorkerBreakdown,
};
use crate::error::{Error, Result};
use crate::strategy::{StrategyConfig, StrategyKind};
use crate::workload::Workload;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const DIVERGED: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const IO: i32 = 4;
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Csv(_) => exit::IO,
        Error::NonFinite(_) | Error::Diverged { .. } => exit::DIVERGED,
        _ => exit::CONFIG,
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub struct RunOutcome {
    pub config: RunConfig,
    pub trace: Trace,
    pub replay: Replay,
}

impl RunOutcome {
    pub fn report(&self) -> &RunReport {
        &self.replay.report
    }
}

pub fn build_workload(cfg: &RunConfig) -> Result<Workload> {
    Workload::build(&cfg.workload, cfg.cluster.num_workers(), cfg.seed)
}

/// Generates the trace and replays it.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let workload = build_workload(cfg)?;
    let trace = generate_trace(&cfg.timing())?;
    execute_trace(cfg, trace, &workload)
}

/// Replays an existing trace under `cfg`; refuses traces generated from other timing settings.
pub fn execute_trace(cfg: &RunConfig, trace: Trace, workload: &Workload) -> Result<RunOutcome> {
    let mut r = replay(&trace, &cfg.timing(), workload, &cfg.replay_options())?;
    r.report.config_hash = cfg.hash();
    Ok(RunOutcome {
        config: cfg.clone(),
        trace,
        replay: r,
    })
}

/// Writes `report.json`, `loss_curve.csv`, `breakdown.csv`, `config.toml` and optionally the trace.
pub fn write_outcome(out: &RunOutcome, dir: &Path) -> Result<()> {
    let report = out.report();
    write_atomic(dir.join("report.json"), &report.to_json()?)?;
    write_atomic(dir.join("config.toml"), out.config.to_toml_string()?.as_bytes())?;

    let mut curve = csv::Writer::from_writer(Vec::new());
    curve.write_record(["time", "samples", "global_updates", "loss"])?;
    for s in &report.loss_curve {
        curve.write_record([
            s.time.to_string(),
            s.samples.to_string(),
            s.global_updates.to_string(),
            s.loss.to_string(),
        ])?;
    }
    write_atomic(dir.join("loss_curve.csv"), &csv_bytes(curve)?)?;

    let mut bd = csv::Writer::from_writer(Vec::new());
    bd.write_record(["worker", "compute_fraction", "comm_fraction", "stall_fraction"])?;
    for (w, b) in report.breakdown.iter().enumerate() {
        bd.write_record([
            w.to_string(),
            b.compute_fraction.to_string(),
            b.comm_fraction.to_string(),
            b.stall_fraction.to_string(),
        ])?;
    }
    write_atomic(dir.join("breakdown.csv"), &csv_bytes(bd)?)?;

    if out.config.output.write_trace {
        out.trace.write(dir.join("trace.ndjson.gz"))?;
    }
    Ok(())
}

fn csv_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Config with the strategy replaced by the default preset of `kind`.
pub fn with_strategy(cfg: &RunConfig, kind: StrategyKind) -> Result<RunConfig> {
    let mut c = cfg.clone();
    c.strategy = StrategyConfig::for_kind(kind);
    c.validate()?;
    Ok(c)
}

/// One line of a strategy comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub strategy: StrategyKind,
    pub final_loss: Option<f64>,
    pub time_to_loss: Option<f64>,
    pub tokens_to_loss: Option<f64>,
    pub global_updates: u64,
    pub diverged: bool,
    /// DiLoCo time-to-loss divided by this strategy's.
    pub speedup_vs_diloco: Option<f64>,
}

/// Runs each config concurrently; results keep input order.
pub fn execute_all(configs: &[RunConfig]) -> Result<Vec<RunOutcome>> {
    configs.par_iter().map(execute).collect()
}

pub fn compare_rows(outcomes: &[RunOutcome], target: Option<f64>) -> Vec<CompareRow> {
    let reach = |r: &RunReport| target.map(|t| time_to_loss(r, t));
    let diloco_ttl = outcomes
        .iter()
        .find(|o| o.config.strategy.kind == StrategyKind::Diloco)
        .and_then(|o| reach(o.report()))
        .and_then(|r| r.time());
    outcomes
        .iter()
        .map(|o| {
            let r = o.report();
            let reach = reach(r);
            let ttl = reach.as_ref().and_then(|x| x.time());
            CompareRow {
                strategy: o.config.strategy.kind,
                final_loss: r.final_loss,
                time_to_loss: ttl,
                tokens_to_loss: reach.as_ref().and_then(|x| x.samples()),
                global_updates: r.global_updates,
                diverged: r.is_diverged(),
                speedup_vs_diloco: match (diloco_ttl, ttl) {
                    (Some(d), Some(t)) if t > 0.0 => Some(d / t),
                    _ => None,
                },
            }
        })
        .collect()
}

pub fn write_compare_csv<W: Write>(rows: &[CompareRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "strategy",
        "final_loss",
        "time_to_loss",
        "tokens_to_loss",
        "global_updates",
        "diverged",
        "speedup_vs_diloco",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        out.write_record([
            r.strategy.name().to_string(),
            opt(r.final_loss),
            opt(r.time_to_loss),
            opt(r.tokens_to_loss),
            r.global_updates.to_string(),
            r.diverged.to_string(),
            opt(r.speedup_vs_diloco),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Runs `cfg` once per axis value and tabulates the results.
pub fn run_sweep(cfg: &RunConfig, axis: &str, values: &[f64]) -> Result<(SweepSummary, Vec<RunOutcome>)> {
    if values.is_empty() {
        return Err(Error::config("sweep", "needs at least one value"));
    }
    let configs = values
        .iter()
        .map(|v| cfg.with_override(&format!("{axis}={v}")))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = execute_all(&configs)?;
    let reports: Vec<RunReport> = outcomes.iter().map(|o| o.report().clone()).collect();
    let summary = sweep(axis, values, &reports, cfg.target_loss)?;
    Ok((summary, outcomes))
}

/// Parses `axis=v1,v2,...`.
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<f64>)> {
    let (axis, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::config("sweep", "expected axis=v1,v2,..."))?;
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::config("sweep", format!("`{v}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((axis.trim().to_string(), values))
}

pub fn write_sweep(summary: &SweepSummary, dir: &Path) -> Result<PathBuf> {
    let mut buf = Vec::new();
    write_sweep_csv(summary, &mut buf)?;
    let path = dir.join("sweep.csv");
    write_atomic(&path, &buf)?;
    Ok(path)
}

/// Mean runtime breakdown of each strategy on `cluster`, from timing alone.
pub fn breakdown_table(
    cluster: &ClusterSpec,
    kinds: &[StrategyKind],
    stop: StopRule,
    seed: u64,
) -> Result<Vec<(StrategyKind, WorkerBreakdown)>> {
    kinds
        .par_iter()
        .map(|&kind| {
            let timing = TimingConfig::new(cluster.clone(), StrategyConfig::for_kind(kind), stop, seed);
            let trace = generate_trace(&timing)?;
            Ok((kind, mean_breakdown(&runtime_breakdown(&trace))))
        })
        .collect()
}
