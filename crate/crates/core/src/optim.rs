//! Update rules: server-side (delayed) Nesterov momentum, worker inner optimizers,
//! the warmup + cosine learning-rate schedule, and gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Descent-direction pseudo-gradient `old − new`.
///
/// Workers and local servers report displacements (`new − old`); servers feed
/// the negated displacement to [`NesterovState::apply`] so that `η = 1, β = 0`
/// reproduces the displacement exactly.
pub fn pseudo_gradient(old_model: &ParamVector, new_model: &ParamVector) -> Result<ParamVector> {
    old_model.sub(new_model)
}

/// How the delayed Nesterov rule moves the model between momentum refreshes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterRefresh {
    /// Step by `(η/d)(1−β)·g` on every non-refresh update.
    #[default]
    ScaledGradient,
    /// Hold the model until the refresh, then apply the averaged buffer.
    Hold,
}

/// Server-side Nesterov momentum with an optional momentum-update delay `d`.
///
/// With `d = 1` this is `m ← βm + g; θ ← θ − η[(1−β)g + βm]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NesterovState {
    momentum: Vec<f64>,
    accumulator: Vec<f64>,
    steps: u64,
    pub delay: u64,
    pub lr: f64,
    pub beta: f64,
    pub inter_refresh: InterRefresh,
}

impl NesterovState {
    pub fn new(dim: usize, lr: f64, beta: f64, delay: u64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("momentum {beta} outside [0, 1)")));
        }
        if delay == 0 {
            return Err(Error::InvalidArgument("momentum delay must be >= 1".into()));
        }
        Ok(NesterovState {
            momentum: vec![0.0; dim],
            accumulator: vec![0.0; dim],
            steps: 0,
            delay,
            lr,
            beta,
            inter_refresh: InterRefresh::default(),
        })
    }

    pub fn with_inter_refresh(mut self, rule: InterRefresh) -> Self {
        self.inter_refresh = rule;
        self
    }

    pub fn momentum(&self) -> &[f64] {
        &self.momentum
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accumulator
    }

    pub fn step_count(&self) -> u64 {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.momentum.len()
    }

    /// Applies one (pseudo-)gradient and returns the updated model.
    pub fn apply(&mut self, model: &ParamVector, g: &ParamVector) -> Result<ParamVector> {
        if g.len() != self.dim() || model.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: if g.len() != self.dim() { g.len() } else { model.len() },
            });
        }
        let g = g.as_slice();
        let d = self.delay as f64;
        let (eta, beta) = (self.lr, self.beta);

        let mut next_acc = self.accumulator.clone();
        for (a, gi) in next_acc.iter_mut().zip(g) {
            *a += gi;
        }
        let steps = self.steps + 1;
        let refresh = steps.is_multiple_of(self.delay);

        let mut out = model.as_slice().to_vec();
        let mut next_m = self.momentum.clone();
        if refresh {
            for (m, a) in next_m.iter_mut().zip(&next_acc) {
                *m = beta * *m + a / d;
            }
        }
        match (self.inter_refresh, refresh) {
            (InterRefresh::ScaledGradient, false) => {
                for (x, gi) in out.iter_mut().zip(g) {
                    *x -= (eta / d) * (1.0 - beta) * gi;
                }
            }
            (InterRefresh::ScaledGradient, true) if self.delay == 1 => {
                for ((x, gi), m) in out.iter_mut().zip(g).zip(&next_m) {
                    *x -= eta * ((1.0 - beta) * gi + beta * m);
                }
            }
            (InterRefresh::ScaledGradient, true) => {
                for ((x, gi), m) in out.iter_mut().zip(g).zip(&next_m) {
                    *x = *x - (eta / d) * (1.0 - beta) * gi - eta * beta * m;
                }
            }
            (InterRefresh::Hold, false) => {}
            (InterRefresh::Hold, true) => {
                for ((x, a), m) in out.iter_mut().zip(&next_acc).zip(&next_m) {
                    *x -= eta * ((1.0 - beta) * (a / d) + beta * m);
                }
            }
        }

        let out = ParamVector::from_computed(out, "nesterov_apply")?;
        if !next_m.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("nesterov momentum".into()));
        }
        self.steps = steps;
        self.momentum = next_m;
        if refresh {
            next_acc.iter_mut().for_each(|a| *a = 0.0);
        }
        self.accumulator = next_acc;
        Ok(out)
    }
}

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

/// Which optimizer a worker runs for its inner steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnerOptKind {
    #[serde(alias = "sgd")]
    PlainSgd,
    #[serde(rename = "adamw")]
    AdamW(AdamWParams),
}

/// Per-worker inner optimizer state. Plain SGD carries no vectors.
#[derive(Clone, Debug, PartialEq)]
pub enum InnerOptState {
    PlainSgd,
    AdamW {
        params: AdamWParams,
        m: Vec<f64>,
        v: Vec<f64>,
        step: u64,
    },
}

impl InnerOptState {
    pub fn new(kind: InnerOptKind, dim: usize) -> Self {
        match kind {
            InnerOptKind::PlainSgd => InnerOptState::PlainSgd,
            InnerOptKind::AdamW(params) => InnerOptState::AdamW {
                params,
                m: vec![0.0; dim],
                v: vec![0.0; dim],
                step: 0,
            },
        }
    }

    /// In-place inner step on raw slices; callers validate finiteness.
    pub(crate) fn step_in_place(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            InnerOptState::PlainSgd => {
                for (x, g) in theta.iter_mut().zip(grad) {
                    *x -= lr * g;
                }
            }
            InnerOptState::AdamW { params, m, v, step } => {
                *step += 1;
                let t = *step as i32;
                let bc1 = 1.0 - params.beta1.powi(t);
                let bc2 = 1.0 - params.beta2.powi(t);
                let decay = 1.0 - lr * params.weight_decay;
                for i in 0..theta.len() {
                    let g = grad[i];
                    m[i] = params.beta1 * m[i] + (1.0 - params.beta1) * g;
                    v[i] = params.beta2 * v[i] + (1.0 - params.beta2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    theta[i] = theta[i] * decay - lr * m_hat / (v_hat.sqrt() + params.eps);
                }
            }
        }
    }

    /// One inner optimizer step: `model − lr·grad` for plain SGD, bias-corrected
    /// AdamW with decoupled weight decay otherwise.
    pub fn step(&mut self, model: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "inner learning rate {lr} must be positive"
            )));
        }
        if model.len() != grad.len() {
            return Err(Error::DimensionMismatch {
                expected: model.len(),
                got: grad.len(),
            });
        }
        if let InnerOptState::AdamW { m, .. } = self {
            if m.len() != model.len() {
                return Err(Error::DimensionMismatch {
                    expected: m.len(),
                    got: model.len(),
                });
            }
        }
        let mut theta = model.as_slice().to_vec();
        self.step_in_place(&mut theta, grad.as_slice(), lr);
        ParamVector::from_computed(theta, "inner_step")
    }
}

/// Scales `g` down to `max_norm` when its Euclidean norm exceeds it.
pub fn clip_gradient(g: &ParamVector, max_norm: f64) -> ParamVector {
    let mut v = g.as_slice().to_vec();
    clip_in_place(&mut v, max_norm);
    ParamVector::from_computed(v, "clip_gradient").expect("scaling a finite vector down stays finite")
}

pub(crate) fn clip_in_place(g: &mut [f64], max_norm: f64) {
    debug_assert!(max_norm > 0.0);
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        g.iter_mut().for_each(|v| *v *= s);
    }
}

/// Linear warmup to `peak`, then cosine decay to `floor_fraction · peak` at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub floor_fraction: f64,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_steps: u64, total_steps: u64) -> Self {
        LrSchedule {
            peak,
            warmup_steps,
            total_steps,
            floor_fraction: 0.1,
        }
    }

    pub fn lr_at(&self, t: u64) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "step {t} beyond schedule length {}",
                self.total_steps
            )));
        }
        let w = self.warmup_steps;
        if t <= w && w > 0 {
            return Ok(self.peak * t as f64 / w as f64);
        }
        let span = (self.total_steps - w).max(1) as f64;
        let progress = (t - w) as f64 / span;
        let f = self.floor_fraction;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        Ok(self.peak * (f + (1.0 - f) * cosine))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Cosine,
    Constant,
}

fn default_warmup_fraction() -> f64 {
    0.05
}
fn default_floor_fraction() -> f64 {
    0.1
}
fn default_clip() -> Option<f64> {
    Some(1.0)
}
fn default_inner_kind() -> InnerOptKind {
    InnerOptKind::AdamW(AdamWParams::default())
}

/// Worker-side optimizer block: inner optimizer, peak rate, schedule and clipping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerConfig {
    #[serde(default = "default_inner_kind")]
    pub optimizer: InnerOptKind,
    pub lr: f64,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default = "default_warmup_fraction")]
    pub warmup_fraction: f64,
    #[serde(default = "default_floor_fraction")]
    pub floor_fraction: f64,
    /// Maximum gradient norm; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub clip: Option<f64>,
}

impl InnerConfig {
    pub fn sgd(lr: f64) -> Self {
        InnerConfig {
            optimizer: InnerOptKind::PlainSgd,
            lr,
            schedule: ScheduleKind::Constant,
            warmup_fraction: 0.0,
            floor_fraction: 1.0,
            clip: None,
        }
    }

    pub fn adamw(lr: f64) -> Self {
        InnerConfig {
            optimizer: default_inner_kind(),
            lr,
            schedule: ScheduleKind::Cosine,
            warmup_fraction: default_warmup_fraction(),
            floor_fraction: default_floor_fraction(),
            clip: default_clip(),
        }
    }

    /// Schedule over `total_steps` schedule positions.
    pub fn schedule(&self, total_steps: u64) -> LrSchedule {
        let total_steps = total_steps.max(1);
        match self.schedule {
            ScheduleKind::Constant => LrSchedule {
                peak: self.lr,
                warmup_steps: 0,
                total_steps,
                floor_fraction: 1.0,
            },
            ScheduleKind::Cosine => LrSchedule {
                peak: self.lr,
                warmup_steps: (self.warmup_fraction * total_steps as f64).round() as u64,
                total_steps,
                floor_fraction: self.floor_fraction,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("inner.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("inner.warmup_fraction", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.floor_fraction) {
            return Err(Error::config("inner.floor_fraction", "must lie in [0, 1]"));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::config("inner.clip", "must be positive"));
            }
        }
        if let InnerOptKind::AdamW(p) = self.optimizer {
            if !(0.0..1.0).contains(&p.beta1)
                || !(0.0..1.0).contains(&p.beta2)
                || !(p.eps > 0.0)
                || p.weight_decay < 0.0
            {
                return Err(Error::config(
                    "inner.optimizer",
                    "AdamW needs betas in [0, 1), eps > 0, weight_decay >= 0",
                ));
            }
        }
        Ok(())
    }
}
