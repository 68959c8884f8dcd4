//! Helpers shared by the integration test targets.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{HashMap, HashSet};

use proptest::prelude::*;

use halos::cluster::{ClusterSpec, LpsSpec, WorkerSpec};
use halos::engine::{EventKind, StopRule, TimingConfig, Trace};
use halos::optim::InnerConfig;
use halos::params::{Actor, ParamVector, VersionId};
use halos::strategy::{LpsState, ServerOpt, StrategyConfig, StrategyKind};
use halos::workload::{QuadraticSpec, Workload, WorkloadSpec};

pub fn config_path(name: &str) -> String {
    format!("{}/configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Random multi-region cluster with one LPS per region and the GPS in region 0.
pub fn arb_cluster() -> impl Strategy<Value = ClusterSpec> {
    (1usize..=3)
        .prop_flat_map(|regions| {
            (
                prop::collection::vec(1usize..=3, regions),
                prop::collection::vec(0.1f64..100.0, regions * regions),
                prop::collection::vec(1.0f64..10.0, 9),
                0.05f64..1.0,
                1_000_000u64..100_000_000,
            )
        })
        .prop_map(|(sizes, bw, speeds, step, bytes)| {
            let r = sizes.len();
            let names: Vec<String> = (0..r).map(|i| format!("R-{}", i + 1)).collect();
            let mut bandwidth = vec![vec![0.0; r]; r];
            for i in 0..r {
                for j in 0..r {
                    let (a, b) = (i.min(j), i.max(j));
                    bandwidth[i][j] = bw[a * r + b];
                }
            }
            let mut workers = Vec::new();
            let mut lps = Vec::new();
            for (i, &n) in sizes.iter().enumerate() {
                let members: Vec<usize> = (workers.len()..workers.len() + n).collect();
                for _ in 0..n {
                    workers.push(WorkerSpec {
                        region: names[i].clone(),
                        speed: speeds[workers.len()],
                    });
                }
                lps.push(LpsSpec {
                    region: names[i].clone(),
                    workers: members,
                });
            }
            ClusterSpec {
                gps_region: names[0].clone(),
                regions: names,
                bandwidth_gbps: bandwidth,
                latency_s: Vec::new(),
                workers,
                lps,
                profiled_step_s: step,
                message_bytes: bytes,
            }
        })
}

pub fn arb_strategy(kinds: &'static [StrategyKind]) -> impl Strategy<Value = StrategyConfig> {
    (
        prop::sample::select(kinds),
        1u64..=8,
        1u64..=4,
        any::<bool>(),
        0.0f64..=1.0,
        0.0f64..0.95,
        0.0f64..0.95,
    )
        .prop_map(|(kind, h, k, dyn_steps, alpha, beta_g, beta_l)| {
            let mut s = StrategyConfig::for_kind(kind);
            if kind != StrategyKind::SyncSgd {
                s.local_steps = h;
            }
            if matches!(kind, StrategyKind::Halos | StrategyKind::AsyncLocalSgd) {
                s.dyn_local_steps = dyn_steps;
            }
            s.k = k;
            s.alpha = alpha;
            s.global = ServerOpt::new(0.1, beta_g, 1 + k % 2);
            s.local = ServerOpt::new(0.1, beta_l, 2);
            s
        })
}

pub fn arb_timing(kinds: &'static [StrategyKind]) -> impl Strategy<Value = TimingConfig> {
    (arb_cluster(), arb_strategy(kinds), 20u64..200, any::<u64>())
        .prop_map(|(c, s, steps, seed)| TimingConfig::new(c, s, StopRule::WorkerSteps(steps), seed))
}

pub fn small_quadratic(num_workers: usize, seed: u64) -> Workload {
    let mut spec = QuadraticSpec::isotropic(6);
    spec.noise_std = 0.1;
    spec.zeta = 0.2;
    Workload::build(&WorkloadSpec::Quadratic(spec), num_workers, seed).expect("valid quadratic")
}

pub fn small_inner() -> InnerConfig {
    InnerConfig::sgd(0.05)
}

/// Every produced update is consumed exactly once, every message arrives exactly
/// once and not before it was sent, and step counts add up.
pub fn check_conservation(trace: &Trace) -> Result<(), String> {
    let mut finishes: HashSet<VersionId> = HashSet::new();
    let mut lps_sends: HashSet<VersionId> = HashSet::new();
    let mut consumed: HashMap<VersionId, u32> = HashMap::new();
    let mut sends: HashMap<u64, f64> = HashMap::new();
    let mut arrived: HashSet<u64> = HashSet::new();
    let mut open_rounds: HashMap<usize, u64> = HashMap::new();
    let (mut steps, mut barriers, mut gps_applies, mut lps_applies) = (0u64, 0u64, 0u64, 0u64);
    let mut gps_version = 0u64;

    for e in &trace.events {
        match &e.kind {
            EventKind::WorkerStart { steps: s, round, .. } => {
                let Actor::Worker(w) = e.actor else {
                    return Err(format!("seq {}: start on {}", e.seq, e.actor));
                };
                if open_rounds.insert(w, *round).is_some() {
                    return Err(format!("seq {}: worker {w} started twice", e.seq));
                }
                steps += s;
            }
            EventKind::WorkerFinish { round, delta } => {
                let Actor::Worker(w) = e.actor else {
                    return Err(format!("seq {}: finish on {}", e.seq, e.actor));
                };
                if open_rounds.remove(&w) != Some(*round) {
                    return Err(format!("seq {}: worker {w} finished a round it did not start", e.seq));
                }
                finishes.insert(*delta);
            }
            EventKind::MsgSend { msg, .. } => {
                if sends.insert(*msg, e.t).is_some() {
                    return Err(format!("seq {}: message {msg} sent twice", e.seq));
                }
            }
            EventKind::MsgArrive { msg, .. } => {
                let sent = sends
                    .get(msg)
                    .ok_or(format!("seq {}: message {msg} arrived unsent", e.seq))?;
                if e.t < *sent || !arrived.insert(*msg) {
                    return Err(format!("seq {}: message {msg} arrived early or twice", e.seq));
                }
            }
            EventKind::LpsApplyDelta { delta, send, .. } => {
                lps_applies += 1;
                if !finishes.contains(delta) {
                    return Err(format!("seq {}: {delta} applied before it was produced", e.seq));
                }
                *consumed.entry(*delta).or_default() += 1;
                if let Some(s) = send {
                    lps_sends.insert(*s);
                }
            }
            EventKind::GpsApply { deltas, produces } => {
                gps_applies += 1;
                gps_version += 1;
                if produces.counter != gps_version {
                    return Err(format!("seq {}: global version jumped to {}", e.seq, produces.counter));
                }
                for d in deltas {
                    if !finishes.contains(d) && !lps_sends.contains(d) {
                        return Err(format!("seq {}: {d} applied before it was produced", e.seq));
                    }
                    *consumed.entry(*d).or_default() += 1;
                }
            }
            EventKind::Barrier { .. } => barriers += 1,
            EventKind::LpsMerge { .. } => {}
        }
    }
    if steps != trace.header.total_worker_steps {
        return Err(format!(
            "{steps} steps started, header says {}",
            trace.header.total_worker_steps
        ));
    }
    if !open_rounds.is_empty() {
        return Err(format!("{} rounds never finished", open_rounds.len()));
    }
    if sends.len() != arrived.len() {
        return Err(format!("{} messages sent, {} arrived", sends.len(), arrived.len()));
    }
    for id in finishes.iter().chain(&lps_sends) {
        match consumed.get(id) {
            Some(1) => {}
            n => return Err(format!("{id} consumed {} times", n.copied().unwrap_or(0))),
        }
    }
    if consumed.len() != finishes.len() + lps_sends.len() {
        return Err("an update was consumed that was never produced".into());
    }
    match trace.header.strategy {
        StrategyKind::Halos => {
            if lps_applies != finishes.len() as u64 || gps_applies != lps_sends.len() as u64 {
                return Err("hierarchical update counts do not balance".into());
            }
        }
        k if k.is_synchronous() => {
            if gps_applies != barriers {
                return Err(format!("{barriers} barriers but {gps_applies} global updates"));
            }
        }
        _ => {
            if gps_applies != finishes.len() as u64 {
                return Err("every worker round must produce one global update".into());
            }
        }
    }
    Ok(())
}

/// Applies an inbox to an LPS and to an independent scalar fold; returns the
/// largest coordinate disagreement and whether the counters match.
pub fn lps_fold_disagreement(items: &[(bool, Vec<f64>)], k: u64, alpha: f64, beta: f64) -> (f64, bool) {
    let (lr, d) = (0.3, 2u64);
    let opt = ServerOpt::new(lr, beta, d);
    let init = vec![0.5, -0.5, 0.0];
    let pv = |v: &[f64]| ParamVector::new(v.to_vec()).expect("finite");
    let mut lps = LpsState::new(pv(&init), &opt, k, alpha).expect("valid lps");
    for (is_global, v) in items {
        if *is_global {
            lps.on_global_model(&pv(v)).expect("merge");
        } else {
            lps.on_worker_delta(&pv(v)).expect("apply");
        }
    }

    let eta = lr * d as f64;
    let mut model = init.clone();
    let mut reference = model.clone();
    let (mut m, mut acc, mut applied) = (vec![0.0; 3], vec![0.0; 3], 0u64);
    let (mut t, mut t_last) = (0u64, 0u64);
    for (is_global, v) in items {
        if *is_global {
            t_last = t;
            for j in 0..3 {
                model[j] = (1.0 - alpha) * model[j] + alpha * v[j];
            }
            reference = model.clone();
        } else {
            applied += 1;
            for j in 0..3 {
                let g = -v[j];
                acc[j] += g;
                model[j] -= (eta / d as f64) * (1.0 - beta) * g;
                if applied % d == 0 {
                    m[j] = beta * m[j] + acc[j] / d as f64;
                    model[j] -= eta * beta * m[j];
                    acc[j] = 0.0;
                }
            }
            t += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for j in 0..3 {
        worst = worst
            .max((lps.model.as_slice()[j] - model[j]).abs())
            .max((lps.reference.as_slice()[j] - reference[j]).abs());
    }
    (worst, (lps.t, lps.t_last) == (t, t_last))
}

pub fn arb_inbox() -> impl Strategy<Value = (Vec<(bool, Vec<f64>)>, u64, f64, f64)> {
    (
        prop::collection::vec((any::<bool>(), prop::collection::vec(-1.0f64..1.0, 3)), 1..40),
        1u64..6,
        0.0f64..=1.0,
        0.0f64..0.95,
    )
}
