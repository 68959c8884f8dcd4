use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{keyed_rng, splitmix64, ShardMode};
use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Curvature of the quadratic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hessian {
    /// Diagonal with eigenvalues log-spaced from `min` to `max`.
    Spectrum {
        min: f64,
        max: f64,
    },
    Diagonal(Vec<f64>),
    /// Symmetric positive-definite, row-major.
    Dense(Vec<Vec<f64>>),
}

impl Default for Hessian {
    fn default() -> Self {
        Hessian::Spectrum { min: 1.0, max: 1.0 }
    }
}

/// Explicit coordinates or a seeded uniform draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorInit {
    Values(Vec<f64>),
    Uniform { lo: f64, hi: f64 },
}

impl VectorInit {
    fn resolve(&self, dim: usize, rng: &mut ChaCha8Rng, field: &str) -> Result<Vec<f64>> {
        match self {
            VectorInit::Values(v) if v.len() == dim => Ok(v.clone()),
            VectorInit::Values(v) => Err(Error::config(field, format!("expected {dim} values, got {}", v.len()))),
            VectorInit::Uniform { lo, hi } => Ok((0..dim).map(|_| rng.random_range(*lo..=*hi)).collect()),
        }
    }
}

fn default_theta_star() -> VectorInit {
    VectorInit::Uniform { lo: -1.0, hi: 1.0 }
}

fn default_init() -> VectorInit {
    VectorInit::Values(Vec::new())
}

fn default_batch() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub dim: usize,
    #[serde(default)]
    pub hessian: Hessian,
    #[serde(default = "default_theta_star")]
    pub theta_star: VectorInit,
    /// Starting point; an empty list means the origin.
    #[serde(default = "default_init")]
    pub init: VectorInit,
    /// Heterogeneity ζ scaling the per-worker optimum offsets.
    #[serde(default)]
    pub zeta: f64,
    /// Per-coordinate gradient noise standard deviation.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub shard: ShardMode,
    #[serde(default = "default_batch")]
    pub batch_size: u64,
}

impl QuadraticSpec {
    pub fn isotropic(dim: usize) -> Self {
        QuadraticSpec {
            dim,
            hessian: Hessian::default(),
            theta_star: default_theta_star(),
            init: default_init(),
            zeta: 0.0,
            noise_std: 0.0,
            shard: ShardMode::Iid,
            batch_size: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("workload.dim", "must be positive"));
        }
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return Err(Error::config("workload.zeta", "must be non-negative"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("workload.noise_std", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("workload.batch_size", "must be positive"));
        }
        match &self.hessian {
            Hessian::Spectrum { min, max } => {
                if !(*min > 0.0 && max >= min && max.is_finite()) {
                    return Err(Error::config("workload.hessian", "spectrum needs 0 < min <= max"));
                }
            }
            Hessian::Diagonal(d) => {
                if d.len() != self.dim || d.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                    return Err(Error::config(
                        "workload.hessian",
                        "diagonal needs `dim` positive entries",
                    ));
                }
            }
            Hessian::Dense(m) => {
                if m.len() != self.dim || m.iter().any(|r| r.len() != self.dim) {
                    return Err(Error::config("workload.hessian", "dense matrix must be dim x dim"));
                }
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        if m[i][j] != m[j][i] {
                            return Err(Error::config("workload.hessian", "dense matrix must be symmetric"));
                        }
                    }
                }
                if !is_positive_definite(m) {
                    return Err(Error::config(
                        "workload.hessian",
                        "dense matrix must be positive definite",
                    ));
                }
            }
        }
        Ok(())
    }
}

fn is_positive_definite(m: &[Vec<f64>]) -> bool {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if !(d > 0.0) {
                    return false;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (m[i][j] - s) / l[j][j];
            }
        }
    }
    true
}

#[derive(Clone, Debug)]
enum Curvature {
    Diagonal(Vec<f64>),
    Dense(Vec<Vec<f64>>),
}

impl Curvature {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Curvature::Diagonal(d) => {
                for ((o, a), v) in out.iter_mut().zip(d).zip(x) {
                    *o = a * v;
                }
            }
            Curvature::Dense(m) => {
                for (o, row) in out.iter_mut().zip(m) {
                    *o = row.iter().zip(x).map(|(a, v)| a * v).sum();
                }
            }
        }
    }

    fn energy(&self, x: &[f64]) -> f64 {
        match self {
            Curvature::Diagonal(d) => 0.5 * d.iter().zip(x).map(|(a, v)| a * v * v).sum::<f64>(),
            Curvature::Dense(_) => {
                let mut ax = vec![0.0; x.len()];
                self.apply(x, &mut ax);
                0.5 * ax.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
            }
        }
    }
}

/// `F_i(θ) = ½(θ − c_i)ᵀA(θ − c_i)` with `c_i = θ* + ζ·u_i`.
#[derive(Clone, Debug)]
pub struct QuadraticTask {
    curvature: Curvature,
    theta_star: Vec<f64>,
    offsets: Vec<Vec<f64>>,
    zeta: f64,
    noise_std: f64,
    shard: ShardMode,
    init: Vec<f64>,
    batch_size: u64,
    seed: u64,
}

impl QuadraticTask {
    pub fn build(spec: &QuadraticSpec, num_workers: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        let dim = spec.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x5155_4144));
        let curvature = match &spec.hessian {
            Hessian::Spectrum { min, max } => Curvature::Diagonal(
                (0..dim)
                    .map(|j| {
                        let f = if dim == 1 { 0.0 } else { j as f64 / (dim - 1) as f64 };
                        min * (max / min).powf(f)
                    })
                    .collect(),
            ),
            Hessian::Diagonal(d) => Curvature::Diagonal(d.clone()),
            Hessian::Dense(m) => Curvature::Dense(m.clone()),
        };
        let theta_star = spec.theta_star.resolve(dim, &mut rng, "workload.theta_star")?;
        let init = match &spec.init {
            VectorInit::Values(v) if v.is_empty() => vec![0.0; dim],
            other => other.resolve(dim, &mut rng, "workload.init")?,
        };
        let offsets = (0..num_workers)
            .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        Ok(QuadraticTask {
            curvature,
            theta_star,
            offsets,
            zeta: spec.zeta,
            noise_std: spec.noise_std,
            shard: spec.shard,
            init,
            batch_size: spec.batch_size,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn num_workers(&self) -> usize {
        self.offsets.len()
    }

    pub fn batch_size(&self) -> u64 {
        self.batch_size
    }

    pub fn initial_params(&self) -> ParamVector {
        ParamVector::new(self.init.clone()).expect("validated init")
    }

    /// Optimum of worker `i`'s own objective.
    pub fn worker_optimum(&self, i: usize) -> Vec<f64> {
        self.theta_star
            .iter()
            .zip(&self.offsets[i])
            .map(|(t, u)| t + self.zeta * u)
            .collect()
    }

    /// Minimiser of the mean objective: `θ* + ζ·mean(u)`.
    pub fn global_optimum(&self) -> Vec<f64> {
        let n = self.offsets.len() as f64;
        (0..self.dim())
            .map(|j| self.theta_star[j] + self.zeta * self.offsets.iter().map(|u| u[j]).sum::<f64>() / n)
            .collect()
    }

    pub fn offsets(&self) -> &[Vec<f64>] {
        &self.offsets
    }

    /// Objective of worker `i` at θ (noise-free).
    pub fn worker_loss(&self, theta: &[f64], i: usize) -> f64 {
        let c = self.worker_optimum(i);
        let r: Vec<f64> = theta.iter().zip(&c).map(|(t, c)| t - c).collect();
        self.curvature.energy(&r)
    }

    fn target(&self, worker: usize) -> Vec<f64> {
        match self.shard {
            ShardMode::NonIid => self.worker_optimum(worker),
            ShardMode::Iid => self.global_optimum(),
        }
    }

    pub(super) fn grad_into(&self, theta: &[f64], worker: usize, step: u64, out: &mut [f64]) -> f64 {
        let c = self.target(worker);
        let r: Vec<f64> = theta.iter().zip(&c).map(|(t, c)| t - c).collect();
        self.curvature.apply(&r, out);
        if self.noise_std > 0.0 {
            let mut rng = keyed_rng(self.seed, worker, step);
            for g in out.iter_mut() {
                *g += self.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        self.curvature.energy(&r)
    }

    pub fn full_loss(&self, theta: &[f64]) -> f64 {
        let n = self.offsets.len();
        (0..n).map(|i| self.worker_loss(theta, i)).sum::<f64>() / n as f64
    }
}
