//! Desk-scale objectives with per-worker data shards.
//!
//! Every stochastic quantity is drawn from a counter-based stream keyed by
//! `(seed, worker, step)`, so gradients do not depend on evaluation order.

mod charlm;
mod corpus;
mod quadratic;

pub use charlm::{CharLmSpec, CharLmTask, CorpusSource};
pub use corpus::{load_tsv_corpus, parse_tsv_corpus, synthetic_corpus, CorpusLine, SyntheticCorpus};
pub use quadratic::{Hessian, QuadraticSpec, QuadraticTask, VectorInit};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShardMode {
    #[default]
    Iid,
    NonIid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSpec {
    Quadratic(QuadraticSpec),
    CharLm(CharLmSpec),
}

impl WorkloadSpec {
    pub fn shard_mode(&self) -> ShardMode {
        match self {
            WorkloadSpec::Quadratic(q) => q.shard,
            WorkloadSpec::CharLm(c) => c.shard,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WorkloadSpec::Quadratic(q) => q.validate(),
            WorkloadSpec::CharLm(c) => c.validate(),
        }
    }
}

/// A built objective shared read-only by all workers.
#[derive(Clone, Debug)]
pub enum Workload {
    Quadratic(QuadraticTask),
    CharLm(CharLmTask),
}

impl Workload {
    pub fn build(spec: &WorkloadSpec, num_workers: usize, seed: u64) -> Result<Self> {
        if num_workers == 0 {
            return Err(Error::InvalidArgument("a workload needs at least one worker".into()));
        }
        Ok(match spec {
            WorkloadSpec::Quadratic(q) => Workload::Quadratic(QuadraticTask::build(q, num_workers, seed)?),
            WorkloadSpec::CharLm(c) => Workload::CharLm(CharLmTask::build(c, num_workers, seed)?),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Workload::Quadratic(q) => q.dim(),
            Workload::CharLm(c) => c.dim(),
        }
    }

    pub fn num_workers(&self) -> usize {
        match self {
            Workload::Quadratic(q) => q.num_workers(),
            Workload::CharLm(c) => c.num_workers(),
        }
    }

    /// Samples consumed by one inner step of one worker.
    pub fn batch_size(&self) -> u64 {
        match self {
            Workload::Quadratic(q) => q.batch_size(),
            Workload::CharLm(c) => c.batch_size() as u64,
        }
    }

    pub fn initial_params(&self) -> ParamVector {
        match self {
            Workload::Quadratic(q) => q.initial_params(),
            Workload::CharLm(c) => c.initial_params(),
        }
    }

    /// Stochastic gradient of worker `worker`'s objective at its `step`-th draw;
    /// writes into `out` and returns the mini-batch loss.
    pub fn grad_into(&self, theta: &[f64], worker: usize, step: u64, out: &mut [f64]) -> Result<f64> {
        if theta.len() != self.dim() || out.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len().min(out.len()),
            });
        }
        if worker >= self.num_workers() {
            return Err(Error::InvalidArgument(format!("worker {worker} has no shard")));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("gradient input".into()));
        }
        let loss = match self {
            Workload::Quadratic(q) => q.grad_into(theta, worker, step, out),
            Workload::CharLm(c) => c.grad_into(theta, worker, step, out),
        };
        if !loss.is_finite() || out.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of worker {worker} at step {step}")));
        }
        Ok(loss)
    }

    pub fn grad(&self, theta: &ParamVector, worker: usize, step: u64) -> Result<(ParamVector, f64)> {
        let mut out = vec![0.0; self.dim()];
        let loss = self.grad_into(theta.as_slice(), worker, step, &mut out)?;
        Ok((ParamVector::from_computed(out, "gradient")?, loss))
    }

    /// Exact mean objective over all shards.
    pub fn full_loss(&self, theta: &ParamVector) -> f64 {
        match self {
            Workload::Quadratic(q) => q.full_loss(theta.as_slice()),
            Workload::CharLm(c) => c.full_loss(theta.as_slice()),
        }
    }
}

/// Generator for draw `step` of `worker` under `seed`.
pub(crate) fn keyed_rng(seed: u64, worker: usize, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(worker as u64 + 1)));
    rng.set_stream(step);
    rng
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
