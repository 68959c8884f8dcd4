//! Dense parameter vectors and the versioned snapshot store that traces refer to.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Flat dense vector of model parameters, gradients, or displacements.
///
/// Every constructor and arithmetic operation rejects non-finite entries, so
/// a `ParamVector` that exists is always finite.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

fn check_finite(values: &[f64], context: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context.to_string()))
    }
}

fn check_dims(a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "ParamVector::new")?;
        Ok(ParamVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    /// Wraps values produced by an in-place kernel, validating finiteness.
    pub(crate) fn from_computed(values: Vec<f64>, context: &str) -> Result<Self> {
        check_finite(&values, context)?;
        Ok(ParamVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_dims(self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_dims(self, other)?;
        let out = self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect();
        ParamVector::from_computed(out, "sub")
    }

    /// `self + other`.
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        check_dims(self, other)?;
        let out = self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect();
        ParamVector::from_computed(out, "add")
    }

    pub fn scale(&self, a: f64) -> Result<ParamVector> {
        let out = self.0.iter().map(|v| a * v).collect();
        ParamVector::from_computed(out, "scale")
    }

    pub fn neg(&self) -> ParamVector {
        ParamVector(self.0.iter().map(|v| -v).collect())
    }

    /// Euclidean distance `‖self − other‖₂`.
    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        check_dims(self, other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Elementwise mean of equally sized vectors, summed in slice order.
    pub fn mean(vectors: &[&ParamVector]) -> Result<ParamVector> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean of zero vectors".into()))?;
        let mut acc = vec![0.0; first.len()];
        for v in vectors {
            check_dims(first, v)?;
            for (a, x) in acc.iter_mut().zip(&v.0) {
                *a += x;
            }
        }
        let n = vectors.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        ParamVector::from_computed(acc, "mean")
    }

    /// Little-endian bytes of the values, without a length prefix.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.0.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// 64-bit FNV-1a over the little-endian value bytes.
    pub fn content_hash(&self) -> u64 {
        crate::engine::fnv1a64(&self.to_le_bytes())
    }

    /// Writes a length-prefixed little-endian snapshot: `u64` count then `f64` values.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.0.len() as u64).to_le_bytes())?;
        w.write_all(&self.to_le_bytes())?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<ParamVector> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let n = u64::from_le_bytes(len) as usize;
        let mut values = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        ParamVector::new(values)
    }
}

/// Returns `a·x + y` elementwise.
pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    if !a.is_finite() {
        return Err(Error::InvalidArgument(format!("axpy scalar {a} is not finite")));
    }
    check_dims(x, y)?;
    let out = x.0.iter().zip(&y.0).map(|(xi, yi)| a * xi + yi).collect();
    ParamVector::from_computed(out, "axpy")
}

/// Returns `(1 − alpha)·local + alpha·global`.
pub fn convex_merge(local: &ParamVector, global: &ParamVector, alpha: f64) -> Result<ParamVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("merge weight {alpha} outside [0, 1]")));
    }
    check_dims(local, global)?;
    let keep = 1.0 - alpha;
    let out = local
        .0
        .iter()
        .zip(&global.0)
        .map(|(l, g)| keep * l + alpha * g)
        .collect();
    ParamVector::from_computed(out, "convex_merge")
}

/// A simulated actor: the global server, a local server, or a worker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Actor {
    Gps,
    Lps(usize),
    Worker(usize),
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Gps => write!(f, "gps"),
            Actor::Lps(i) => write!(f, "lps:{i}"),
            Actor::Worker(i) => write!(f, "worker:{i}"),
        }
    }
}

impl FromStr for Actor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad actor id `{s}`"));
        if s == "gps" {
            return Ok(Actor::Gps);
        }
        let (kind, idx) = s.split_once(':').ok_or_else(bad)?;
        let idx: usize = idx.parse().map_err(|_| bad())?;
        match kind {
            "lps" => Ok(Actor::Lps(idx)),
            "worker" => Ok(Actor::Worker(idx)),
            _ => Err(bad()),
        }
    }
}

/// Whether a snapshot holds a model or a displacement/gradient payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VersionKind {
    Model,
    Delta,
}

/// Identifies one immutable snapshot: counters strictly increase per `(actor, kind)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VersionId {
    pub actor: Actor,
    pub kind: VersionKind,
    pub counter: u64,
}

impl VersionId {
    pub fn model(actor: Actor, counter: u64) -> Self {
        VersionId {
            actor,
            kind: VersionKind::Model,
            counter,
        }
    }

    pub fn delta(actor: Actor, counter: u64) -> Self {
        VersionId {
            actor,
            kind: VersionKind::Delta,
            counter,
        }
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            VersionKind::Model => 'm',
            VersionKind::Delta => 'd',
        };
        write!(f, "{}/{}/{}", self.actor, k, self.counter)
    }
}

impl FromStr for VersionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad version id `{s}`"));
        let mut parts = s.rsplitn(3, '/');
        let counter = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let kind = match parts.next().ok_or_else(bad)? {
            "m" => VersionKind::Model,
            "d" => VersionKind::Delta,
            _ => return Err(bad()),
        };
        let actor = parts.next().ok_or_else(bad)?.parse()?;
        Ok(VersionId { actor, kind, counter })
    }
}

macro_rules! serde_via_string {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_via_string!(Actor);
serde_via_string!(VersionId);

/// Copy-on-write snapshot store keyed by [`VersionId`].
///
/// When reference counts are registered, a snapshot is evicted once its last
/// expected consumer has read it, unless it is the newest version of its actor
/// or retention is enabled.
#[derive(Debug, Default)]
pub struct SnapshotStore {
    snaps: HashMap<VersionId, Arc<ParamVector>>,
    remaining_refs: HashMap<VersionId, u32>,
    latest: HashMap<(Actor, VersionKind), u64>,
    retain_all: bool,
}

impl SnapshotStore {
    pub fn new(retain_all: bool) -> Self {
        SnapshotStore {
            retain_all,
            ..Default::default()
        }
    }

    pub fn retains_all(&self) -> bool {
        self.retain_all
    }

    pub fn set_expected_refs(&mut self, refs: HashMap<VersionId, u32>) {
        self.remaining_refs = refs;
    }

    pub fn insert(&mut self, id: VersionId, value: Arc<ParamVector>) -> Result<()> {
        let key = (id.actor, id.kind);
        if let Some(&last) = self.latest.get(&key) {
            if id.counter <= last {
                return Err(Error::InvalidArgument(format!(
                    "version {id} does not advance past counter {last}"
                )));
            }
        }
        self.latest.insert(key, id.counter);
        self.snaps.insert(id, value);
        self.evict_superseded(key, id.counter);
        Ok(())
    }

    fn evict_superseded(&mut self, key: (Actor, VersionKind), newest: u64) {
        if self.retain_all {
            return;
        }
        let remaining = &self.remaining_refs;
        self.snaps.retain(|v, _| {
            (v.actor, v.kind) != key || v.counter == newest || remaining.get(v).copied().unwrap_or(0) > 0
        });
    }

    pub fn get(&self, id: &VersionId) -> Option<Arc<ParamVector>> {
        self.snaps.get(id).cloned()
    }

    /// Reads a snapshot on behalf of one registered consumer.
    pub fn consume(&mut self, id: &VersionId) -> Option<Arc<ParamVector>> {
        let snap = self.snaps.get(id).cloned()?;
        if let Some(n) = self.remaining_refs.get_mut(id) {
            *n = n.saturating_sub(1);
            let newest = self.latest.get(&(id.actor, id.kind)) == Some(&id.counter);
            if *n == 0 && !newest && !self.retain_all {
                self.snaps.remove(id);
            }
        }
        Some(snap)
    }

    pub fn len(&self) -> usize {
        self.snaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snaps.is_empty()
    }
}
