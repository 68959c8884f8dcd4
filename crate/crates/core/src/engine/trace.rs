use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use super::fnv1a64;
use crate::cluster::ClusterSpec;
use crate::error::{Error, Result};
use crate::params::{Actor, VersionId};
use crate::strategy::{StrategyConfig, StrategyKind};

/// When trace generation stops starting new worker rounds. In-flight rounds
/// always complete and their updates are delivered.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Simulated seconds.
    SimTime(f64),
    /// Total local steps across all workers.
    WorkerSteps(u64),
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StopRule::SimTime(t) if !(t > 0.0 && t.is_finite()) => {
                Err(Error::config("stop.sim_time", "must be positive"))
            }
            StopRule::WorkerSteps(0) => Err(Error::config("stop.worker_steps", "must be positive")),
            _ => Ok(()),
        }
    }
}

/// Everything that determines event timing.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingConfig {
    pub cluster: ClusterSpec,
    pub strategy: StrategyConfig,
    pub stop: StopRule,
    pub seed: u64,
}

impl TimingConfig {
    pub fn new(cluster: ClusterSpec, strategy: StrategyConfig, stop: StopRule, seed: u64) -> Self {
        TimingConfig {
            cluster,
            strategy,
            stop,
            seed,
        }
    }

    /// FNV-1a over the canonical JSON of the timing-relevant fields.
    pub fn hash(&self) -> u64 {
        let v = serde_json::json!({
            "cluster": self.cluster,
            "strategy": self.strategy.timing_view(),
            "stop": self.stop,
            "seed": self.seed,
        });
        fnv1a64(&serde_json::to_vec(&v).expect("json value serializes"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    #[serde(with = "crate::engine::hex_u64")]
    pub config_hash: u64,
    pub seed: u64,
    pub strategy: StrategyKind,
    pub num_workers: usize,
    pub num_lps: usize,
    /// Local steps started across all workers.
    pub total_worker_steps: u64,
    pub end_time: f64,
}

pub const TRACE_FORMAT: &str = "halos-trace-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    WorkerStart {
        model: VersionId,
        steps: u64,
        round: u64,
        /// Schedule position: local steps started so far divided by worker count.
        progress: u64,
    },
    WorkerFinish {
        round: u64,
        delta: VersionId,
    },
    MsgSend {
        msg: u64,
        to: Actor,
        content: VersionId,
        bytes: u64,
    },
    MsgArrive {
        msg: u64,
        from: Actor,
        content: VersionId,
    },
    LpsApplyDelta {
        delta: VersionId,
        produces: VersionId,
        /// Accumulated displacement emitted for the global server.
        send: Option<VersionId>,
    },
    LpsMerge {
        global: VersionId,
        produces: VersionId,
    },
    GpsApply {
        deltas: Vec<VersionId>,
        produces: VersionId,
    },
    Barrier {
        round: u64,
        participants: Vec<usize>,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::WorkerStart { .. } => "WorkerStart",
            EventKind::WorkerFinish { .. } => "WorkerFinish",
            EventKind::MsgSend { .. } => "MsgSend",
            EventKind::MsgArrive { .. } => "MsgArrive",
            EventKind::LpsApplyDelta { .. } => "LpsApplyDelta",
            EventKind::LpsMerge { .. } => "LpsMerge",
            EventKind::GpsApply { .. } => "GpsApply",
            EventKind::Barrier { .. } => "Barrier",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub t: f64,
    pub actor: Actor,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<Event>,
}

impl Trace {
    pub fn to_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.to_ndjson(&mut out).expect("writing to memory");
        out
    }

    pub fn from_ndjson<R: BufRead>(r: R) -> Result<Trace> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::trace(0, "empty trace file"))??;
        let header: TraceHeader = serde_json::from_str(&first)?;
        if header.format != TRACE_FORMAT {
            return Err(Error::trace(0, format!("unsupported trace format `{}`", header.format)));
        }
        let mut events = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line)?);
        }
        Ok(Trace { header, events })
    }

    /// FNV-1a over the NDJSON encoding.
    pub fn hash(&self) -> u64 {
        fnv1a64(&self.to_ndjson_bytes())
    }

    /// Writes NDJSON, gzip-compressed when the path ends in `.gz`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = if is_gz(path) {
            let mut enc = GzEncoder::new(Vec::new(), Compression::default());
            self.to_ndjson(&mut enc)?;
            enc.finish()?
        } else {
            self.to_ndjson_bytes()
        };
        crate::run::write_atomic(path, &bytes)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Trace> {
        let path = path.as_ref();
        let file = File::open(path)?;
        if is_gz(path) {
            let mut s = String::new();
            GzDecoder::new(file).read_to_string(&mut s)?;
            Trace::from_ndjson(s.as_bytes())
        } else {
            Trace::from_ndjson(BufReader::new(file))
        }
    }

    pub fn count(&self, name: &str) -> usize {
        self.events.iter().filter(|e| e.kind.name() == name).count()
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}
