use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::transfer_time;
use super::metrics::{mean_breakdown, runtime_breakdown, staleness_of, Staleness};
use super::trace::{Event, EventKind, TimingConfig, Trace, TRACE_FORMAT};
use crate::analysis::{Divergence, LossSample, RunReport, StalenessSummary};
use crate::cluster::{compute_time, ring_allreduce_by_index};
use crate::error::{Error, Result};
use crate::optim::{InnerConfig, InnerOptState, LrSchedule};
use crate::params::{Actor, ParamVector, SnapshotStore, VersionId, VersionKind};
use crate::strategy::{
    diloco_outer_step, sync_sgd_step, worker_round, GpsState, LpsState, RoundSettings, StrategyKind,
};
use crate::workload::Workload;

fn default_interval() -> Option<f64> {
    Some(10.0)
}
fn default_every() -> Option<u64> {
    Some(50)
}

/// When the global model's full-objective loss is recorded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Simulated seconds between samples; `None` disables the time grid.
    #[serde(default = "default_interval")]
    pub interval_s: Option<f64>,
    /// Sample after every this many global updates; `None` disables it.
    #[serde(default = "default_every")]
    pub every_global_updates: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            interval_s: default_interval(),
            every_global_updates: default_every(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.interval_s {
            if !(i > 0.0 && i.is_finite()) {
                return Err(Error::config("eval.interval_s", "must be positive"));
            }
        }
        if self.every_global_updates == Some(0) {
            return Err(Error::config("eval.every_global_updates", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOptions {
    pub inner: InnerConfig,
    pub eval: EvalConfig,
    /// Worker threads for round computation; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Keep every model version, required for staleness measurement.
    pub retain_snapshots: bool,
    /// Record the global model after every update.
    pub record_global_trajectory: bool,
    /// Stop once a loss sample reaches this value.
    pub target_loss: Option<f64>,
}

impl ReplayOptions {
    pub fn new(inner: InnerConfig) -> Self {
        ReplayOptions {
            inner,
            eval: EvalConfig::default(),
            threads: None,
            retain_snapshots: false,
            record_global_trajectory: false,
            target_loss: None,
        }
    }
}

#[derive(Debug)]
pub struct Replay {
    pub report: RunReport,
    pub snapshots: SnapshotStore,
    /// Present when snapshots were retained.
    pub staleness: Option<Staleness>,
    /// Global model after each update, starting with the initial model.
    pub global_trajectory: Vec<ParamVector>,
}

/// Executes the numerics of `trace` on `workload`.
///
/// The trace must have been generated from `timing`. Every event is checked
/// against the timing model and the strategy's protocol before it is applied.
pub fn replay(trace: &Trace, timing: &TimingConfig, workload: &Workload, opts: &ReplayOptions) -> Result<Replay> {
    opts.inner.validate()?;
    opts.eval.validate()?;
    match opts.threads {
        Some(0) => Err(Error::config("threads", "must be positive")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(|| Replayer::new(trace, timing, workload, opts)?.run()),
        None => Replayer::new(trace, timing, workload, opts)?.run(),
    }
}

struct PendingRound {
    start: Arc<ParamVector>,
    steps: u64,
    step_key: u64,
    progress: u64,
    start_t: f64,
    result: Option<Result<ParamVector>>,
}

struct WorkerState {
    inner: InnerOptState,
    step_key: u64,
    round: u64,
    last_finish: f64,
    pending: Option<PendingRound>,
}

enum Global {
    Server(GpsState),
    Sync {
        model: ParamVector,
        version: u64,
        inner: InnerOptState,
    },
}

impl Global {
    fn model(&self) -> &ParamVector {
        match self {
            Global::Server(g) => &g.model,
            Global::Sync { model, .. } => model,
        }
    }

    fn version(&self) -> u64 {
        match self {
            Global::Server(g) => g.version,
            Global::Sync { version, .. } => *version,
        }
    }
}

struct SentMsg {
    t: f64,
    from: Actor,
    to: Actor,
    content: VersionId,
    bytes: u64,
}

struct Replayer<'a> {
    trace: &'a Trace,
    timing: &'a TimingConfig,
    workload: &'a Workload,
    opts: &'a ReplayOptions,
    kind: StrategyKind,
    schedule: LrSchedule,
    schedule_len: u64,
    settings: RoundSettings,
    store: SnapshotStore,
    global: Global,
    lps: Vec<LpsState>,
    lps_versions: Vec<u64>,
    lps_deltas: Vec<u64>,
    lps_of: Vec<usize>,
    workers: Vec<WorkerState>,
    fastest: f64,
    started_steps: u64,
    sync_round: u64,
    sync_progress: Option<u64>,
    barrier_t: Option<f64>,
    allreduce: f64,
    produced: HashMap<(Actor, VersionKind), u64>,
    in_flight: HashMap<u64, SentMsg>,
    inbox: HashMap<Actor, HashMap<VersionId, u32>>,
    samples_consumed: u64,
    curve: Vec<LossSample>,
    cached_loss: Option<(u64, f64)>,
    trajectory: Vec<ParamVector>,
    diverged: Option<Divergence>,
    reached: bool,
}

impl<'a> Replayer<'a> {
    fn new(
        trace: &'a Trace,
        timing: &'a TimingConfig,
        workload: &'a Workload,
        opts: &'a ReplayOptions,
    ) -> Result<Self> {
        let h = &trace.header;
        if h.format != TRACE_FORMAT {
            return Err(Error::trace(0, format!("unsupported trace format `{}`", h.format)));
        }
        if h.config_hash != timing.hash() {
            return Err(Error::trace(
                0,
                format!(
                    "trace was generated for config {:016x}, not {:016x}",
                    h.config_hash,
                    timing.hash()
                ),
            ));
        }
        let spec = &timing.cluster;
        let n = spec.num_workers();
        if h.num_workers != n || workload.num_workers() != n {
            return Err(Error::trace(
                0,
                format!(
                    "worker counts disagree: trace {}, cluster {n}, workload {}",
                    h.num_workers,
                    workload.num_workers()
                ),
            ));
        }
        let kind = timing.strategy.kind;
        if h.strategy != kind {
            return Err(Error::trace(0, "trace strategy differs from the timing config"));
        }

        let schedule_len = h.total_worker_steps.div_ceil(n as u64).max(1);
        let schedule = opts.inner.schedule(schedule_len);
        let theta0 = workload.initial_params();
        let dim = theta0.len();

        let mut store = SnapshotStore::new(opts.retain_snapshots);
        store.set_expected_refs(expected_refs(&trace.events));
        store.insert(VersionId::model(Actor::Gps, 0), Arc::new(theta0.clone()))?;
        let mut produced = HashMap::new();
        produced.insert((Actor::Gps, VersionKind::Model), 0);

        let global = if kind == StrategyKind::SyncSgd {
            Global::Sync {
                model: theta0.clone(),
                version: 0,
                inner: InnerOptState::new(opts.inner.optimizer, dim),
            }
        } else {
            Global::Server(GpsState::new(theta0.clone(), &timing.strategy.effective_global())?)
        };

        let mut lps = Vec::with_capacity(h.num_lps);
        for l in 0..h.num_lps {
            let s = &timing.strategy;
            lps.push(LpsState::new(theta0.clone(), &s.local, s.k, s.alpha)?);
            store.insert(VersionId::model(Actor::Lps(l), 0), Arc::new(theta0.clone()))?;
            produced.insert((Actor::Lps(l), VersionKind::Model), 0);
        }

        let allreduce = if kind.is_synchronous() {
            let regions: Vec<usize> = (0..n).map(|w| spec.worker_region(w)).collect();
            ring_allreduce_by_index(&regions, spec.message_bytes, spec)?
        } else {
            0.0
        };

        let workers = (0..n)
            .map(|_| WorkerState {
                inner: InnerOptState::new(opts.inner.optimizer, dim),
                step_key: 0,
                round: 0,
                last_finish: 0.0,
                pending: None,
            })
            .collect();

        Ok(Replayer {
            trace,
            timing,
            workload,
            opts,
            kind,
            schedule,
            schedule_len,
            settings: RoundSettings { clip: opts.inner.clip },
            store,
            global,
            lps_versions: vec![0; lps.len()],
            lps_deltas: vec![0; lps.len()],
            lps,
            lps_of: spec.lps_of_workers(),
            workers,
            fastest: spec.fastest_speed(),
            started_steps: 0,
            sync_round: 0,
            sync_progress: None,
            barrier_t: None,
            allreduce,
            produced,
            in_flight: HashMap::new(),
            inbox: HashMap::new(),
            samples_consumed: 0,
            curve: Vec::new(),
            cached_loss: None,
            trajectory: if opts.record_global_trajectory {
                vec![theta0]
            } else {
                Vec::new()
            },
            diverged: None,
            reached: false,
        })
    }

    fn run(mut self) -> Result<Replay> {
        let events = &self.trace.events;
        let mut processed = 0;
        let mut prev_t = 0.0;
        let mut next_mark = 0u64;
        let mut end_time = 0.0;
        for (i, e) in events.iter().enumerate() {
            if e.seq != i as u64 {
                return Err(Error::trace(e.seq, format!("expected seq {i}")));
            }
            if !e.t.is_finite() || e.t < prev_t {
                return Err(Error::trace(e.seq, format!("time {} precedes {prev_t}", e.t)));
            }
            prev_t = e.t;
            if let Some(interval) = self.opts.eval.interval_s {
                while (next_mark as f64) * interval < e.t {
                    let mark = next_mark as f64 * interval;
                    next_mark += 1;
                    self.sample(mark, e.seq)?;
                    if self.stopped() {
                        end_time = mark;
                        break;
                    }
                }
            }
            if self.stopped() {
                break;
            }
            match self.apply(e) {
                Ok(()) => {}
                Err(Error::NonFinite(reason)) => {
                    self.diverged = Some(Divergence { seq: e.seq, reason });
                }
                Err(err) => return Err(err),
            }
            processed = i + 1;
            end_time = e.t;
            if self.stopped() {
                break;
            }
        }
        if !self.stopped() {
            self.check_complete(end_time)?;
            self.sample(end_time, events.last().map_or(0, |e| e.seq))?;
        }

        let staleness = if self.opts.retain_snapshots {
            Some(staleness_of(&events[..processed], &self.store)?)
        } else {
            None
        };
        let breakdown = runtime_breakdown(self.trace);
        let final_loss = match &self.diverged {
            Some(_) => None,
            None => Some(self.loss_of_current()),
        };
        let final_model_hash = self.global.model().content_hash();
        let report = RunReport {
            strategy: self.kind,
            config_hash: self.trace.header.config_hash,
            timing_hash: self.trace.header.config_hash,
            trace_hash: self.trace.hash(),
            seed: self.timing.seed,
            loss_curve: self.curve,
            mean_breakdown: mean_breakdown(&breakdown),
            breakdown,
            staleness: staleness.as_ref().map(StalenessSummary::from),
            final_model_hash,
            final_loss,
            total_samples: self.samples_consumed,
            global_updates: self.global.version(),
            end_time,
            diverged: self.diverged,
        };
        Ok(Replay {
            report,
            snapshots: self.store,
            staleness,
            global_trajectory: self.trajectory,
        })
    }

    /// A fully replayed trace must account for every step, message and round its header promises.
    fn check_complete(&self, end_time: f64) -> Result<()> {
        let last = self.trace.events.last().map_or(0, |e| e.seq);
        let h = &self.trace.header;
        if self.started_steps != h.total_worker_steps {
            return Err(Error::trace(
                last,
                format!(
                    "{} steps started, header declares {}",
                    self.started_steps, h.total_worker_steps
                ),
            ));
        }
        if end_time != h.end_time {
            return Err(Error::trace(
                last,
                format!("trace ends at {end_time}, header declares {}", h.end_time),
            ));
        }
        if !self.in_flight.is_empty() {
            return Err(Error::trace(
                last,
                format!("{} messages never arrived", self.in_flight.len()),
            ));
        }
        if let Some(w) = self.workers.iter().position(|w| w.pending.is_some()) {
            return Err(Error::trace(last, format!("worker {w} never finished its last round")));
        }
        Ok(())
    }

    fn stopped(&self) -> bool {
        self.reached || self.diverged.is_some()
    }

    fn loss_of_current(&mut self) -> f64 {
        let v = self.global.version();
        match self.cached_loss {
            Some((cv, loss)) if cv == v => loss,
            _ => {
                let loss = self.workload.full_loss(self.global.model());
                self.cached_loss = Some((v, loss));
                loss
            }
        }
    }

    /// Records the current global loss at `time`, replacing a sample taken at the same time.
    fn sample(&mut self, time: f64, seq: u64) -> Result<()> {
        let loss = self.loss_of_current();
        if !loss.is_finite() {
            self.diverged = Some(Divergence {
                seq,
                reason: format!("global loss is {loss}"),
            });
            return Ok(());
        }
        let s = LossSample {
            time,
            samples: self.samples_consumed,
            global_updates: self.global.version(),
            loss,
        };
        match self.curve.last_mut() {
            Some(last) if last.time == time => *last = s,
            _ => self.curve.push(s),
        }
        if self.opts.target_loss.is_some_and(|t| loss <= t) {
            self.reached = true;
        }
        Ok(())
    }

    fn take_inbox(&mut self, actor: Actor, id: &VersionId, seq: u64) -> Result<()> {
        let entry = self
            .inbox
            .get_mut(&actor)
            .and_then(|m| m.get_mut(id))
            .filter(|n| **n > 0)
            .ok_or_else(|| Error::trace(seq, format!("{actor} uses {id} before it arrived")))?;
        *entry -= 1;
        Ok(())
    }

    fn consume(&mut self, id: &VersionId, seq: u64) -> Result<Arc<ParamVector>> {
        self.store
            .consume(id)
            .ok_or_else(|| Error::trace(seq, format!("snapshot {id} unavailable")))
    }

    fn produce(&mut self, id: VersionId, value: ParamVector, seq: u64) -> Result<()> {
        let key = (id.actor, id.kind);
        let expected = self.produced.get(&key).map_or(1, |c| c + 1);
        if id.counter != expected {
            return Err(Error::trace(
                seq,
                format!("{id} out of order, expected counter {expected}"),
            ));
        }
        self.produced.insert(key, id.counter);
        self.store.insert(id, Arc::new(value))
    }

    fn apply(&mut self, e: &Event) -> Result<()> {
        let seq = e.seq;
        let spec = &self.timing.cluster;
        let n = spec.num_workers();
        let sync = self.kind.is_synchronous();
        match (&e.kind, e.actor) {
            (
                EventKind::WorkerStart {
                    model,
                    steps,
                    round,
                    progress,
                },
                Actor::Worker(w),
            ) if w < n => {
                let expected_steps = self.timing.strategy.steps_for(spec.workers[w].speed, self.fastest);
                let ws = &self.workers[w];
                if ws.pending.is_some() {
                    return Err(Error::trace(seq, format!("worker {w} starts while busy")));
                }
                if *round != ws.round || *steps != expected_steps {
                    return Err(Error::trace(
                        seq,
                        format!("worker {w} round {round} with {steps} steps is inconsistent"),
                    ));
                }
                if *progress != self.started_steps / n as u64 {
                    return Err(Error::trace(seq, "schedule progress disagrees with started steps"));
                }
                if sync {
                    if *model != VersionId::model(Actor::Gps, self.global.version()) {
                        return Err(Error::trace(
                            seq,
                            format!("synchronous round starts from stale {model}"),
                        ));
                    }
                    self.sync_progress.get_or_insert(*progress);
                } else {
                    self.take_inbox(Actor::Worker(w), model, seq)?;
                }
                let start = self.consume(model, seq)?;
                self.started_steps += steps;
                let ws = &mut self.workers[w];
                ws.pending = Some(PendingRound {
                    start,
                    steps: *steps,
                    step_key: ws.step_key,
                    progress: *progress,
                    start_t: e.t,
                    result: None,
                });
                ws.step_key += steps;
            }
            (EventKind::WorkerFinish { round, delta }, Actor::Worker(w)) if w < n => {
                let Some(p) = &self.workers[w].pending else {
                    return Err(Error::trace(seq, format!("worker {w} finishes without a round")));
                };
                if *round != self.workers[w].round || *delta != VersionId::delta(Actor::Worker(w), *round) {
                    return Err(Error::trace(seq, format!("worker {w} finish does not match its round")));
                }
                if e.t != p.start_t + compute_time(p.steps, spec.workers[w].speed, spec) {
                    return Err(Error::trace(
                        seq,
                        format!("worker {w} finish time disagrees with compute model"),
                    ));
                }
                if p.result.is_none() {
                    self.compute_pending();
                }
                let ws = &mut self.workers[w];
                let p = ws.pending.take().expect("checked above");
                ws.round += 1;
                ws.last_finish = e.t;
                self.samples_consumed += p.steps * self.workload.batch_size();
                let value = p.result.expect("computed above")?;
                self.store.insert(*delta, Arc::new(value))?;
            }
            (
                EventKind::MsgSend {
                    msg,
                    to,
                    content,
                    bytes,
                },
                from,
            ) if !sync => {
                let known = self
                    .produced
                    .get(&(content.actor, content.kind))
                    .is_some_and(|&c| content.counter <= c);
                let worker_delta =
                    matches!(content.actor, Actor::Worker(w) if w < n && content.counter < self.workers[w].round);
                if content.actor != from || !(known || worker_delta) {
                    return Err(Error::trace(seq, format!("{from} sends {content} it does not own")));
                }
                if self.in_flight.contains_key(msg) {
                    return Err(Error::trace(seq, format!("message {msg} sent twice")));
                }
                self.in_flight.insert(
                    *msg,
                    SentMsg {
                        t: e.t,
                        from,
                        to: *to,
                        content: *content,
                        bytes: *bytes,
                    },
                );
            }
            (EventKind::MsgArrive { msg, from, content }, to) if !sync => {
                let sent = self
                    .in_flight
                    .remove(msg)
                    .ok_or_else(|| Error::trace(seq, format!("message {msg} arrives without a send")))?;
                if sent.from != *from || sent.to != to || sent.content != *content {
                    return Err(Error::trace(seq, format!("message {msg} endpoints or content changed")));
                }
                if e.t != sent.t + transfer_time(spec, sent.from, sent.to, sent.bytes) {
                    return Err(Error::trace(
                        seq,
                        format!("message {msg} arrival time disagrees with link model"),
                    ));
                }
                *self.inbox.entry(to).or_default().entry(*content).or_default() += 1;
            }
            (EventKind::LpsApplyDelta { delta, produces, send }, Actor::Lps(l)) if l < self.lps.len() => {
                if !matches!(delta.actor, Actor::Worker(w) if w < n && self.lps_of[w] == l) {
                    return Err(Error::trace(seq, format!("local server {l} does not serve {delta}")));
                }
                self.take_inbox(Actor::Lps(l), delta, seq)?;
                let d = self.consume(delta, seq)?;
                let out = self.lps[l].on_worker_delta(&d)?;
                self.lps_versions[l] += 1;
                if *produces != VersionId::model(Actor::Lps(l), self.lps_versions[l]) {
                    return Err(Error::trace(seq, format!("unexpected version {produces}")));
                }
                self.produce(*produces, out.reply, seq)?;
                match (out.to_gps, send) {
                    (Some(value), Some(id)) => {
                        self.lps_deltas[l] += 1;
                        if *id != VersionId::delta(Actor::Lps(l), self.lps_deltas[l]) {
                            return Err(Error::trace(seq, format!("unexpected displacement id {id}")));
                        }
                        self.produce(*id, value, seq)?;
                    }
                    (None, None) => {}
                    _ => {
                        return Err(Error::trace(seq, "send flag disagrees with the update count K"));
                    }
                }
            }
            (EventKind::LpsMerge { global, produces }, Actor::Lps(l)) if l < self.lps.len() => {
                if global.actor != Actor::Gps || global.kind != VersionKind::Model {
                    return Err(Error::trace(seq, format!("merge of non-global {global}")));
                }
                self.take_inbox(Actor::Lps(l), global, seq)?;
                let g = self.consume(global, seq)?;
                self.lps[l].on_global_model(&g)?;
                self.lps_versions[l] += 1;
                if *produces != VersionId::model(Actor::Lps(l), self.lps_versions[l]) {
                    return Err(Error::trace(seq, format!("unexpected version {produces}")));
                }
                let model = self.lps[l].model.clone();
                self.produce(*produces, model, seq)?;
            }
            (EventKind::Barrier { round, participants }, Actor::Gps) if sync => {
                if *round != self.sync_round || self.barrier_t.is_some() {
                    return Err(Error::trace(seq, format!("unexpected barrier for round {round}")));
                }
                if *participants != (0..n).collect::<Vec<_>>() {
                    return Err(Error::trace(seq, "barrier must include every worker"));
                }
                let mut latest: f64 = 0.0;
                for (w, ws) in self.workers.iter().enumerate() {
                    if ws.pending.is_some() || ws.round != round + 1 {
                        return Err(Error::trace(seq, format!("worker {w} has not finished round {round}")));
                    }
                    latest = latest.max(ws.last_finish);
                }
                if e.t != latest {
                    return Err(Error::trace(seq, "barrier time differs from the last finish"));
                }
                self.barrier_t = Some(e.t);
            }
            (EventKind::GpsApply { deltas, produces }, Actor::Gps) => {
                let next = VersionId::model(Actor::Gps, self.global.version() + 1);
                if *produces != next {
                    return Err(Error::trace(seq, format!("unexpected version {produces}")));
                }
                if sync {
                    self.apply_sync(e, deltas)?;
                } else {
                    self.apply_async(seq, deltas)?;
                }
                let model = self.global.model().clone();
                self.produce(*produces, model.clone(), seq)?;
                if self.opts.record_global_trajectory {
                    self.trajectory.push(model);
                }
                if let Some(every) = self.opts.eval.every_global_updates {
                    if self.global.version().is_multiple_of(every) {
                        self.sample(e.t, seq)?;
                    }
                }
            }
            (kind, actor) => {
                return Err(Error::trace(
                    seq,
                    format!("{} by {actor} is not valid for {}", kind.name(), self.kind.name()),
                ));
            }
        }
        Ok(())
    }

    fn apply_async(&mut self, seq: u64, deltas: &[VersionId]) -> Result<()> {
        let [delta] = deltas else {
            return Err(Error::trace(seq, "asynchronous update must carry one displacement"));
        };
        let expected_sender = match delta.actor {
            Actor::Lps(_) => self.kind == StrategyKind::Halos,
            Actor::Worker(_) => self.kind == StrategyKind::AsyncLocalSgd,
            Actor::Gps => false,
        };
        if !expected_sender || delta.kind != VersionKind::Delta {
            return Err(Error::trace(seq, format!("global server cannot apply {delta}")));
        }
        self.take_inbox(Actor::Gps, delta, seq)?;
        let d = self.consume(delta, seq)?;
        let Global::Server(gps) = &mut self.global else {
            unreachable!("asynchronous strategies use a global server")
        };
        gps.on_delta(&d)?;
        Ok(())
    }

    fn apply_sync(&mut self, e: &Event, deltas: &[VersionId]) -> Result<()> {
        let seq = e.seq;
        let n = self.workers.len();
        let Some(barrier) = self.barrier_t.take() else {
            return Err(Error::trace(seq, "synchronous update before its barrier"));
        };
        if e.t != barrier + self.allreduce {
            return Err(Error::trace(seq, "update time differs from barrier plus all-reduce"));
        }
        let expected: Vec<VersionId> = (0..n)
            .map(|w| VersionId::delta(Actor::Worker(w), self.sync_round))
            .collect();
        if deltas != expected.as_slice() {
            return Err(Error::trace(
                seq,
                "synchronous update must average every worker of the round",
            ));
        }
        let mut values = Vec::with_capacity(n);
        for d in deltas {
            values.push((*self.consume(d, seq)?).clone());
        }
        let progress = self.sync_progress.take().unwrap_or(0);
        let lr = self
            .schedule
            .lr_at((progress + 1).min(self.schedule_len))
            .expect("position clamped to schedule length");
        match &mut self.global {
            Global::Sync { model, version, inner } => {
                *model = sync_sgd_step(model, &values, inner, lr, self.settings)?;
                *version += 1;
            }
            Global::Server(gps) => diloco_outer_step(gps, &values)?,
        }
        self.sync_round += 1;
        Ok(())
    }

    /// Computes every started round that has no result yet, in parallel.
    fn compute_pending(&mut self) {
        let workload = self.workload;
        let schedule = self.schedule;
        let len = self.schedule_len;
        let settings = self.settings;
        let gradient_only = self.kind == StrategyKind::SyncSgd;
        self.workers.par_iter_mut().enumerate().for_each(|(w, ws)| {
            let Some(p) = ws.pending.as_mut().filter(|p| p.result.is_none()) else {
                return;
            };
            let result = if gradient_only {
                workload.grad(&p.start, w, p.step_key).map(|(g, _)| g)
            } else {
                let progress = p.progress;
                worker_round(
                    workload,
                    w,
                    &mut ws.inner,
                    &p.start,
                    p.steps,
                    p.step_key,
                    |j| {
                        schedule
                            .lr_at((progress + j + 1).min(len))
                            .expect("position clamped to schedule length")
                    },
                    settings,
                )
                .map(|(d, _)| d)
            };
            p.result = Some(result);
        });
    }
}

/// Number of reads of each version by round starts and server updates.
fn expected_refs(events: &[Event]) -> HashMap<VersionId, u32> {
    let mut refs: HashMap<VersionId, u32> = HashMap::new();
    for e in events {
        match &e.kind {
            EventKind::WorkerStart { model, .. } => *refs.entry(*model).or_default() += 1,
            EventKind::LpsApplyDelta { delta, .. } => *refs.entry(*delta).or_default() += 1,
            EventKind::LpsMerge { global, .. } => *refs.entry(*global).or_default() += 1,
            EventKind::GpsApply { deltas, .. } => {
                for d in deltas {
                    *refs.entry(*d).or_default() += 1;
                }
            }
            _ => {}
        }
    }
    refs
}
