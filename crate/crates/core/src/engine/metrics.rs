use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::trace::{Event, EventKind, Trace};
use crate::error::{Error, Result};
use crate::params::{Actor, SnapshotStore, VersionId, VersionKind};

/// Share of a worker's timeline spent computing, waiting on transfers, and
/// waiting at a barrier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerBreakdown {
    pub compute_fraction: f64,
    pub comm_fraction: f64,
    pub stall_fraction: f64,
}

#[derive(Clone, Copy, Debug, Default)]
struct RoundTimes {
    start: f64,
    finish: Option<f64>,
    barrier: Option<f64>,
}

/// Partitions each worker's timeline up to its last round start.
///
/// Each cycle runs from one round start to the next: compute is start to finish,
/// stall is finish to the barrier (synchronous strategies), and the remainder is
/// communication. Time before the first round start counts as communication.
pub fn runtime_breakdown(trace: &Trace) -> Vec<WorkerBreakdown> {
    let n = trace.header.num_workers;
    let mut rounds: Vec<Vec<RoundTimes>> = vec![Vec::new(); n];
    let mut barriers: HashMap<u64, f64> = HashMap::new();
    for e in &trace.events {
        match (&e.kind, e.actor) {
            (EventKind::WorkerStart { .. }, Actor::Worker(w)) if w < n => rounds[w].push(RoundTimes {
                start: e.t,
                ..Default::default()
            }),
            (EventKind::WorkerFinish { .. }, Actor::Worker(w)) if w < n => {
                if let Some(r) = rounds[w].last_mut() {
                    r.finish = Some(e.t);
                }
            }
            (EventKind::Barrier { round, .. }, _) => {
                barriers.insert(*round, e.t);
            }
            _ => {}
        }
    }
    for worker_rounds in &mut rounds {
        for (r, times) in worker_rounds.iter_mut().enumerate() {
            times.barrier = barriers.get(&(r as u64)).copied();
        }
    }
    rounds.iter().map(|r| breakdown_of(r)).collect()
}

fn breakdown_of(rounds: &[RoundTimes]) -> WorkerBreakdown {
    let Some(first) = rounds.first() else {
        return WorkerBreakdown {
            comm_fraction: 1.0,
            ..Default::default()
        };
    };
    let (total, compute, stall) = if rounds.len() >= 2 {
        let total = rounds[rounds.len() - 1].start;
        let mut compute = 0.0;
        let mut stall = 0.0;
        for r in &rounds[..rounds.len() - 1] {
            let finish = r.finish.unwrap_or(r.start);
            compute += finish - r.start;
            if let Some(b) = r.barrier {
                stall += b - finish;
            }
        }
        (total, compute, stall)
    } else {
        let finish = first.finish.unwrap_or(first.start);
        (finish, finish - first.start, 0.0)
    };
    if total <= 0.0 {
        return WorkerBreakdown {
            compute_fraction: 1.0,
            ..Default::default()
        };
    }
    let compute_fraction = compute / total;
    let stall_fraction = stall / total;
    WorkerBreakdown {
        compute_fraction,
        stall_fraction,
        comm_fraction: 1.0 - compute_fraction - stall_fraction,
    }
}

pub fn mean_breakdown(per_worker: &[WorkerBreakdown]) -> WorkerBreakdown {
    let n = per_worker.len().max(1) as f64;
    WorkerBreakdown {
        compute_fraction: per_worker.iter().map(|b| b.compute_fraction).sum::<f64>() / n,
        comm_fraction: per_worker.iter().map(|b| b.comm_fraction).sum::<f64>() / n,
        stall_fraction: per_worker.iter().map(|b| b.stall_fraction).sum::<f64>() / n,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Global,
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StalenessPoint {
    pub seq: u64,
    pub tier: Tier,
    pub value: f64,
}

/// Distance between the model an update is applied to and the model it was computed from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Staleness {
    pub d_g_hat: f64,
    pub d_l_hat: f64,
    pub series: Vec<StalenessPoint>,
}

impl Staleness {
    fn push(&mut self, seq: u64, tier: Tier, value: f64) {
        match tier {
            Tier::Global => self.d_g_hat = self.d_g_hat.max(value),
            Tier::Local => self.d_l_hat = self.d_l_hat.max(value),
        }
        self.series.push(StalenessPoint { seq, tier, value });
    }
}

/// Empirical staleness of every applied update. Needs a replay that retained all snapshots.
pub fn measure_staleness(trace: &Trace, snapshots: &SnapshotStore) -> Result<Staleness> {
    staleness_of(&trace.events, snapshots)
}

pub(crate) fn staleness_of(events: &[Event], snapshots: &SnapshotStore) -> Result<Staleness> {
    if !snapshots.retains_all() {
        return Err(Error::SnapshotsNotRetained);
    }
    let get = |id: &VersionId, seq: u64| {
        snapshots
            .get(id)
            .ok_or_else(|| Error::trace(seq, format!("snapshot {id} missing")))
    };
    let previous = |id: &VersionId| VersionId::model(id.actor, id.counter - 1);

    let mut round_start: HashMap<VersionId, VersionId> = HashMap::new();
    let mut last_merged: HashMap<usize, VersionId> = HashMap::new();
    let mut delta_base: HashMap<VersionId, VersionId> = HashMap::new();
    let mut out = Staleness::default();
    let gps0 = VersionId::model(Actor::Gps, 0);

    for e in events {
        match (&e.kind, e.actor) {
            (EventKind::WorkerStart { model, round, .. }, Actor::Worker(w)) => {
                round_start.insert(VersionId::delta(Actor::Worker(w), *round), *model);
            }
            (EventKind::LpsApplyDelta { delta, produces, send }, Actor::Lps(l)) => {
                let start = round_start
                    .get(delta)
                    .ok_or_else(|| Error::trace(e.seq, format!("{delta} has no round start")))?;
                let d = get(&previous(produces), e.seq)?.distance(&*get(start, e.seq)?)?;
                out.push(e.seq, Tier::Local, d);
                if let Some(s) = send {
                    delta_base.insert(*s, *last_merged.get(&l).unwrap_or(&gps0));
                }
            }
            (EventKind::LpsMerge { global, .. }, Actor::Lps(l)) => {
                last_merged.insert(l, *global);
            }
            (EventKind::GpsApply { deltas, produces }, _) => {
                let current = get(&previous(produces), e.seq)?;
                let mut worst: f64 = 0.0;
                for d in deltas {
                    let base = match d.actor {
                        Actor::Lps(_) if d.kind == VersionKind::Delta => delta_base.get(d),
                        _ => round_start.get(d),
                    }
                    .ok_or_else(|| Error::trace(e.seq, format!("{d} has no computation start")))?;
                    worst = worst.max(current.distance(&*get(base, e.seq)?)?);
                }
                out.push(e.seq, Tier::Global, worst);
            }
            _ => {}
        }
    }
    Ok(out)
}
