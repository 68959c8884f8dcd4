//! Convergence-bound evaluation, run reports, and time-to-loss / sweep summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{Staleness, WorkerBreakdown};
use crate::error::{Error, Result};
use crate::strategy::StrategyKind;

/// Inputs of the non-convex convergence bound for hierarchical momentum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// `F(Θ_0) − F*`.
    pub f0_minus_fstar: f64,
    /// Largest learning rate `η_0`.
    pub eta_0: f64,
    /// Smallest learning rate `η_m`.
    pub eta_m: f64,
    /// Number of global updates.
    pub t: u64,
    pub beta_g: f64,
    pub beta_l: f64,
    /// Smoothness constant.
    pub l: f64,
    /// Gradient-norm bound.
    pub g: f64,
    /// Gradient variance bound.
    pub sigma2: f64,
    /// Squared global staleness bound.
    pub d_g2: f64,
    /// Squared local staleness bound.
    pub d_l2: f64,
}

/// Denominator used in the variance term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    /// `(1 − β_l)(1 − β_g)`.
    #[default]
    Stated,
    /// `(1 − β_l)(1 − β_g²)`.
    SquaredGlobal,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::config(format!("bound.{field}"), reason));
        if !(self.f0_minus_fstar >= 0.0 && self.f0_minus_fstar.is_finite()) {
            return bad("f0_minus_fstar", "must be non-negative");
        }
        if !(self.eta_m > 0.0 && self.eta_m.is_finite()) {
            return bad("eta_m", "must be positive");
        }
        if !(self.eta_0 >= self.eta_m && self.eta_0.is_finite()) {
            return bad("eta_0", "must be at least eta_m");
        }
        if self.t == 0 {
            return bad("t", "must be positive");
        }
        if !(self.beta_g > 0.0 && self.beta_g < 1.0) {
            return bad("beta_g", "must lie strictly inside (0, 1)");
        }
        if !(self.beta_l > 0.0 && self.beta_l < 1.0) {
            return bad("beta_l", "must lie strictly inside (0, 1)");
        }
        if !(self.l > 0.0 && self.l.is_finite()) {
            return bad("l", "must be positive");
        }
        for (name, v) in [
            ("g", self.g),
            ("sigma2", self.sigma2),
            ("d_g2", self.d_g2),
            ("d_l2", self.d_l2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, "must be non-negative");
            }
        }
        Ok(())
    }
}

/// Upper bound on `min_t E‖∇F(Θ_t)‖²`.
pub fn theorem_bound(b: &BoundInputs) -> Result<f64> {
    theorem_bound_variant(b, BoundVariant::Stated)
}

pub fn theorem_bound_variant(b: &BoundInputs, variant: BoundVariant) -> Result<f64> {
    b.validate()?;
    let bg = b.beta_g;
    let optimization = 4.0 * b.f0_minus_fstar / (b.eta_m * b.t as f64) * (1.0 + 1.0 / (1.0 - bg));
    let global_den = match variant {
        BoundVariant::Stated => 1.0 - bg,
        BoundVariant::SquaredGlobal => 1.0 - bg * bg,
    };
    let noise = b.g * b.sigma2 / ((1.0 - b.beta_l) * global_den) + b.l * b.l * b.d_g2 + b.l * b.l * b.d_l2;
    let coefficient = (b.eta_0 / b.eta_m)
        * (1.0 / (bg * bg * bg))
        * (3.0 + 12.0 * b.l * b.eta_0 + 6.0 * b.l * b.eta_0 / ((1.0 - bg) * (1.0 - bg)));
    Ok(optimization + coefficient * noise)
}

/// `1 / (x³(1−x)³)`, the momentum-dependent factor minimized at `x = 0.5`.
pub fn beta_g_tradeoff(x: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::InvalidArgument(format!("tradeoff needs x in (0, 1), got {x}")));
    }
    Ok(1.0 / (x.powi(3) * (1.0 - x).powi(3)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    /// Simulated seconds.
    pub time: f64,
    /// Training samples consumed so far.
    pub samples: u64,
    pub global_updates: u64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub seq: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StalenessSummary {
    pub d_g_hat: f64,
    pub d_l_hat: f64,
    pub global_updates: usize,
    pub local_updates: usize,
}

impl From<&Staleness> for StalenessSummary {
    fn from(s: &Staleness) -> Self {
        let global = s
            .series
            .iter()
            .filter(|p| p.tier == crate::engine::Tier::Global)
            .count();
        StalenessSummary {
            d_g_hat: s.d_g_hat,
            d_l_hat: s.d_l_hat,
            global_updates: global,
            local_updates: s.series.len() - global,
        }
    }
}

/// Outcome of one simulated training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: StrategyKind,
    /// Hash of the resolved run config; a bare replay records the timing hash here.
    #[serde(with = "crate::engine::hex_u64")]
    pub config_hash: u64,
    /// Hash of the timing fields the trace was generated from.
    #[serde(with = "crate::engine::hex_u64")]
    pub timing_hash: u64,
    #[serde(with = "crate::engine::hex_u64")]
    pub trace_hash: u64,
    pub seed: u64,
    pub loss_curve: Vec<LossSample>,
    pub breakdown: Vec<WorkerBreakdown>,
    pub mean_breakdown: WorkerBreakdown,
    pub staleness: Option<StalenessSummary>,
    #[serde(with = "crate::engine::hex_u64")]
    pub final_model_hash: u64,
    /// Full-objective loss of the final global model; absent after divergence.
    pub final_loss: Option<f64>,
    pub total_samples: u64,
    pub global_updates: u64,
    pub end_time: f64,
    pub diverged: Option<Divergence>,
}

impl RunReport {
    pub fn is_diverged(&self) -> bool {
        self.diverged.is_some()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }
}

/// Where a run first reaches a target loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reach {
    Reached { time: f64, samples: f64 },
    NotReached { reason: String },
}

impl Reach {
    pub fn time(&self) -> Option<f64> {
        match self {
            Reach::Reached { time, .. } => Some(*time),
            Reach::NotReached { .. } => None,
        }
    }

    pub fn samples(&self) -> Option<f64> {
        match self {
            Reach::Reached { samples, .. } => Some(*samples),
            Reach::NotReached { .. } => None,
        }
    }
}

/// First simulated time at which the loss curve reaches `target`, interpolating
/// linearly between samples.
pub fn time_to_loss(report: &RunReport, target: f64) -> Reach {
    if let Some(d) = &report.diverged {
        return Reach::NotReached {
            reason: format!("diverged at seq {}: {}", d.seq, d.reason),
        };
    }
    let curve = &report.loss_curve;
    let Some(first) = curve.first() else {
        return Reach::NotReached {
            reason: "no loss samples".into(),
        };
    };
    if first.loss <= target {
        return Reach::Reached {
            time: first.time,
            samples: first.samples as f64,
        };
    }
    for w in curve.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.loss <= target {
            let f = (a.loss - target) / (a.loss - b.loss);
            return Reach::Reached {
                time: a.time + f * (b.time - a.time),
                samples: a.samples as f64 + f * (b.samples as f64 - a.samples as f64),
            };
        }
    }
    let best = curve.iter().map(|s| s.loss).fold(f64::INFINITY, f64::min);
    Reach::NotReached {
        reason: format!("best loss {best} stays above target {target}"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub final_loss: Option<f64>,
    pub time_to_loss: Option<f64>,
    pub tokens_to_loss: Option<f64>,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    /// Row with the lowest final loss among runs that did not diverge.
    pub argmin: Option<usize>,
}

/// Tabulates runs that differ only along `axis`.
pub fn sweep(axis: &str, values: &[f64], reports: &[RunReport], target: Option<f64>) -> Result<SweepSummary> {
    if values.len() != reports.len() {
        return Err(Error::InvalidArgument(format!(
            "{} sweep values but {} reports",
            values.len(),
            reports.len()
        )));
    }
    let rows: Vec<SweepRow> = values
        .iter()
        .zip(reports)
        .map(|(&value, r)| {
            let reach = target.map(|t| time_to_loss(r, t));
            SweepRow {
                axis: axis.to_string(),
                value,
                final_loss: r.final_loss.filter(|_| !r.is_diverged()),
                time_to_loss: reach.as_ref().and_then(Reach::time),
                tokens_to_loss: reach.as_ref().and_then(Reach::samples),
                diverged: r.is_diverged(),
            }
        })
        .collect();
    let argmin = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.final_loss.map(|l| (i, l)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    Ok(SweepSummary { rows, argmin })
}

pub const SWEEP_CSV_HEADER: [&str; 6] = [
    "axis",
    "value",
    "final_loss",
    "time_to_loss",
    "tokens_to_loss",
    "diverged",
];

pub fn write_sweep_csv<W: Write>(summary: &SweepSummary, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_CSV_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &summary.rows {
        out.write_record([
            r.axis.clone(),
            r.value.to_string(),
            opt(r.final_loss),
            opt(r.time_to_loss),
            opt(r.tokens_to_loss),
            r.diverged.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
