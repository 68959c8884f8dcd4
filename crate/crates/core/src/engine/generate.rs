use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::trace::{Event, EventKind, StopRule, TimingConfig, Trace, TraceHeader, TRACE_FORMAT};
use crate::cluster::{compute_time, ring_allreduce_by_index, ClusterSpec};
use crate::error::{Error, Result};
use crate::params::{Actor, VersionId};
use crate::strategy::StrategyKind;

/// Region index hosting an actor.
pub(crate) fn actor_region(spec: &ClusterSpec, actor: Actor) -> usize {
    match actor {
        Actor::Gps => spec.gps_region_index(),
        Actor::Lps(l) => spec.lps_region(l),
        Actor::Worker(w) => spec.worker_region(w),
    }
}

/// Transfer duration of one model-sized message between two actors.
pub(crate) fn transfer_time(spec: &ClusterSpec, from: Actor, to: Actor, bytes: u64) -> f64 {
    spec.p2p_by_index(actor_region(spec, from), actor_region(spec, to), bytes)
}

#[derive(Debug)]
enum Action {
    Arrive {
        msg: u64,
        from: Actor,
        to: Actor,
        content: VersionId,
    },
    Finish {
        worker: usize,
    },
}

#[derive(Debug)]
struct Pending {
    t: f64,
    order: u64,
    action: Action,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    /// Reversed so the max-heap pops the earliest `(t, order)`.
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then_with(|| other.order.cmp(&self.order))
    }
}

#[derive(Clone, Debug, Default)]
struct WorkerGen {
    round: u64,
}

#[derive(Clone, Debug, Default)]
struct LpsGen {
    version: u64,
    t: u64,
    t_last: u64,
    deltas: u64,
}

struct Generator<'a> {
    cfg: &'a TimingConfig,
    spec: &'a ClusterSpec,
    events: Vec<Event>,
    heap: BinaryHeap<Pending>,
    order: u64,
    msg: u64,
    started_steps: u64,
    workers: Vec<WorkerGen>,
    lps: Vec<LpsGen>,
    lps_of: Vec<usize>,
    gps_version: u64,
    fastest: f64,
}

impl<'a> Generator<'a> {
    fn emit(&mut self, t: f64, actor: Actor, kind: EventKind) {
        let seq = self.events.len() as u64;
        self.events.push(Event { seq, t, actor, kind });
    }

    fn schedule(&mut self, t: f64, action: Action) {
        self.order += 1;
        self.heap.push(Pending {
            t,
            order: self.order,
            action,
        });
    }

    fn send(&mut self, t: f64, from: Actor, to: Actor, content: VersionId) {
        let bytes = self.spec.message_bytes;
        let msg = self.msg;
        self.msg += 1;
        self.emit(
            t,
            from,
            EventKind::MsgSend {
                msg,
                to,
                content,
                bytes,
            },
        );
        let arrive = t + transfer_time(self.spec, from, to, bytes);
        self.schedule(arrive, Action::Arrive { msg, from, to, content });
    }

    fn may_start(&self, t: f64) -> bool {
        match self.cfg.stop {
            StopRule::SimTime(limit) => t < limit,
            StopRule::WorkerSteps(budget) => self.started_steps < budget,
        }
    }

    fn steps_for(&self, w: usize) -> u64 {
        self.cfg.strategy.steps_for(self.spec.workers[w].speed, self.fastest)
    }

    fn progress(&self) -> u64 {
        self.started_steps / self.spec.num_workers() as u64
    }

    /// Starts a round on worker `w` from `model` and schedules its finish.
    fn start_round(&mut self, t: f64, w: usize, model: VersionId) -> f64 {
        let steps = self.steps_for(w);
        let round = self.workers[w].round;
        let progress = self.progress();
        self.emit(
            t,
            Actor::Worker(w),
            EventKind::WorkerStart {
                model,
                steps,
                round,
                progress,
            },
        );
        self.started_steps += steps;
        t + compute_time(steps, self.spec.workers[w].speed, self.spec)
    }

    fn finish_round(&mut self, t: f64, w: usize) -> VersionId {
        let round = self.workers[w].round;
        let delta = VersionId::delta(Actor::Worker(w), round);
        self.emit(t, Actor::Worker(w), EventKind::WorkerFinish { round, delta });
        self.workers[w].round += 1;
        delta
    }

    fn run_async(&mut self) -> Result<()> {
        let halos = self.cfg.strategy.kind == StrategyKind::Halos;
        for w in 0..self.spec.num_workers() {
            let (from, model) = if halos {
                let l = self.lps_of[w];
                (Actor::Lps(l), VersionId::model(Actor::Lps(l), 0))
            } else {
                (Actor::Gps, VersionId::model(Actor::Gps, 0))
            };
            self.send(0.0, from, Actor::Worker(w), model);
        }
        while let Some(Pending { t, action, .. }) = self.heap.pop() {
            match action {
                Action::Finish { worker } => {
                    let delta = self.finish_round(t, worker);
                    let to = if halos {
                        Actor::Lps(self.lps_of[worker])
                    } else {
                        Actor::Gps
                    };
                    self.send(t, Actor::Worker(worker), to, delta);
                }
                Action::Arrive { msg, from, to, content } => {
                    self.emit(t, to, EventKind::MsgArrive { msg, from, content });
                    match to {
                        Actor::Worker(w) => {
                            if self.may_start(t) {
                                let done = self.start_round(t, w, content);
                                self.schedule(done, Action::Finish { worker: w });
                            }
                        }
                        Actor::Lps(l) => self.on_lps(t, l, from, content),
                        Actor::Gps => {
                            self.gps_version += 1;
                            let produces = VersionId::model(Actor::Gps, self.gps_version);
                            self.emit(
                                t,
                                Actor::Gps,
                                EventKind::GpsApply {
                                    deltas: vec![content],
                                    produces,
                                },
                            );
                            self.send(t, Actor::Gps, from, produces);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn on_lps(&mut self, t: f64, l: usize, from: Actor, content: VersionId) {
        let k = self.cfg.strategy.k;
        let actor = Actor::Lps(l);
        let state = &mut self.lps[l];
        state.version += 1;
        let produces = VersionId::model(actor, state.version);
        match from {
            Actor::Gps => {
                state.t_last = state.t;
                self.emit(
                    t,
                    actor,
                    EventKind::LpsMerge {
                        global: content,
                        produces,
                    },
                );
            }
            _ => {
                state.t += 1;
                let send = if state.t - state.t_last == k {
                    state.deltas += 1;
                    Some(VersionId::delta(actor, state.deltas))
                } else {
                    None
                };
                self.emit(
                    t,
                    actor,
                    EventKind::LpsApplyDelta {
                        delta: content,
                        produces,
                        send,
                    },
                );
                self.send(t, actor, from, produces);
                if let Some(d) = send {
                    self.send(t, actor, Actor::Gps, d);
                }
            }
        }
    }

    fn run_sync(&mut self) -> Result<()> {
        let n = self.spec.num_workers();
        let regions: Vec<usize> = (0..n).map(|w| self.spec.worker_region(w)).collect();
        let allreduce = ring_allreduce_by_index(&regions, self.spec.message_bytes, self.spec)?;
        let mut now = 0.0;
        let mut round = 0u64;
        while self.may_start(now) {
            let model = VersionId::model(Actor::Gps, self.gps_version);
            let mut finishes: Vec<(f64, usize)> = (0..n).map(|w| (self.start_round(now, w, model), w)).collect();
            finishes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut deltas = Vec::with_capacity(n);
            for &(t, w) in &finishes {
                deltas.push(self.finish_round(t, w));
            }
            let barrier = finishes.last().map(|f| f.0).unwrap_or(now);
            self.emit(
                barrier,
                Actor::Gps,
                EventKind::Barrier {
                    round,
                    participants: (0..n).collect(),
                },
            );
            now = barrier + allreduce;
            deltas.sort_by_key(|d| match d.actor {
                Actor::Worker(w) => w,
                _ => usize::MAX,
            });
            self.gps_version += 1;
            let produces = VersionId::model(Actor::Gps, self.gps_version);
            self.emit(now, Actor::Gps, EventKind::GpsApply { deltas, produces });
            round += 1;
        }
        Ok(())
    }
}

/// Builds the event order of a run from the timing model alone.
pub fn generate_trace(cfg: &TimingConfig) -> Result<Trace> {
    let spec = &cfg.cluster;
    if spec.workers.is_empty() {
        return Err(Error::Unschedulable("cluster has no workers".into()));
    }
    spec.validate()?;
    cfg.strategy.validate()?;
    cfg.stop.validate()?;
    if cfg.strategy.kind == StrategyKind::Halos && spec.lps.is_empty() {
        return Err(Error::Unschedulable(
            "hierarchical training needs at least one local server".into(),
        ));
    }
    let lps_count = if cfg.strategy.kind == StrategyKind::Halos {
        spec.lps.len()
    } else {
        0
    };
    let mut g = Generator {
        cfg,
        spec,
        events: Vec::new(),
        heap: BinaryHeap::new(),
        order: 0,
        msg: 0,
        started_steps: 0,
        workers: vec![WorkerGen::default(); spec.num_workers()],
        lps: vec![LpsGen::default(); lps_count],
        lps_of: spec.lps_of_workers(),
        gps_version: 0,
        fastest: spec.fastest_speed(),
    };
    if cfg.strategy.kind.is_synchronous() {
        g.run_sync()?;
    } else {
        g.run_async()?;
    }
    let end_time = g.events.last().map(|e| e.t).unwrap_or(0.0);
    Ok(Trace {
        header: TraceHeader {
            format: TRACE_FORMAT.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            strategy: cfg.strategy.kind,
            num_workers: spec.num_workers(),
            num_lps: lps_count,
            total_worker_steps: g.started_steps,
            end_time,
        },
        events: g.events,
    })
}
