//! Trace generation from the timing model, numerical replay, and trace-derived metrics.

mod generate;
mod metrics;
mod replay;
mod trace;

use std::hash::Hasher;

pub use generate::generate_trace;
pub use metrics::{
    mean_breakdown, measure_staleness, runtime_breakdown, Staleness, StalenessPoint, Tier, WorkerBreakdown,
};
pub use replay::{replay, EvalConfig, Replay, ReplayOptions};
pub use trace::{Event, EventKind, StopRule, TimingConfig, Trace, TraceHeader, TRACE_FORMAT};

/// 64-bit FNV-1a digest.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Serializes a `u64` as a 16-digit lowercase hex string.
pub mod hex_u64 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16).map_err(D::Error::custom)
    }
}
