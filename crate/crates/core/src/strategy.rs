//! Training strategies: HALoS (global server, local servers, workers) and the
//! synchronous SGD, DiLoCo, DiLoCo+DynUpd and Async-Local-SGD baselines.
//!
//! The handlers here are serial state transitions. Timing lives in
//! [`crate::engine::generate_trace`]; the engine replays handlers in trace order.

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterSpec;
use crate::error::{Error, Result};
use crate::optim::{clip_in_place, InnerOptState, InterRefresh, NesterovState};
use crate::params::{convex_merge, ParamVector};
use crate::workload::Workload;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    SyncSgd,
    Diloco,
    DilocoDynUpd,
    AsyncLocalSgd,
    Halos,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Halos,
        StrategyKind::AsyncLocalSgd,
        StrategyKind::DilocoDynUpd,
        StrategyKind::Diloco,
        StrategyKind::SyncSgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::SyncSgd => "sync_sgd",
            StrategyKind::Diloco => "diloco",
            StrategyKind::DilocoDynUpd => "diloco_dyn_upd",
            StrategyKind::AsyncLocalSgd => "async_local_sgd",
            StrategyKind::Halos => "halos",
        }
    }

    /// Rounds separated by a global barrier.
    pub fn is_synchronous(self) -> bool {
        matches!(
            self,
            StrategyKind::SyncSgd | StrategyKind::Diloco | StrategyKind::DilocoDynUpd
        )
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_").to_ascii_lowercase();
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy `{s}`")))
    }
}

/// Server-side Nesterov hyperparameters. `lr` is the per-update rate `η/d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerOpt {
    pub lr: f64,
    pub beta: f64,
    #[serde(default = "one")]
    pub delay: u64,
    #[serde(default)]
    pub inter_refresh: InterRefresh,
}

fn one() -> u64 {
    1
}

impl ServerOpt {
    pub fn new(lr: f64, beta: f64, delay: u64) -> Self {
        ServerOpt {
            lr,
            beta,
            delay,
            inter_refresh: InterRefresh::default(),
        }
    }

    pub fn build(&self, dim: usize) -> Result<NesterovState> {
        Ok(
            NesterovState::new(dim, self.lr * self.delay as f64, self.beta, self.delay)?
                .with_inter_refresh(self.inter_refresh),
        )
    }

    fn validate(&self, field: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(
                format!("{field}.lr"),
                format!("{} must be positive", self.lr),
            ));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::config(
                format!("{field}.beta"),
                format!("{} outside [0, 1)", self.beta),
            ));
        }
        if self.delay == 0 {
            return Err(Error::config(format!("{field}.delay"), "must be >= 1"));
        }
        Ok(())
    }
}

/// Strategy selection and its server-side hyperparameters.
///
/// Fields a strategy does not use are ignored: `local`, `k` and `alpha` only
/// matter for HALoS, and sync SGD has no server optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Local steps per worker round (`H`, or `H_max` under dynamic steps).
    pub local_steps: u64,
    #[serde(default)]
    pub dyn_local_steps: bool,
    pub global: ServerOpt,
    pub local: ServerOpt,
    /// LPS updates between sends to the global server.
    pub k: u64,
    /// Weight of the global model when an LPS merges it.
    pub alpha: f64,
    /// Forces `β_g = 0`.
    #[serde(default)]
    pub disable_global_momentum: bool,
}

impl StrategyConfig {
    pub fn halos_paper() -> Self {
        StrategyConfig {
            kind: StrategyKind::Halos,
            local_steps: 8,
            dyn_local_steps: true,
            global: ServerOpt::new(0.15, 0.5, 2),
            local: ServerOpt::new(0.2, 0.9, 16),
            k: 32,
            alpha: 0.25,
            disable_global_momentum: false,
        }
    }

    pub fn async_paper() -> Self {
        StrategyConfig {
            kind: StrategyKind::AsyncLocalSgd,
            local_steps: 32,
            dyn_local_steps: true,
            global: ServerOpt::new(0.05, 0.9, 32),
            ..Self::halos_paper()
        }
    }

    pub fn diloco_paper() -> Self {
        StrategyConfig {
            kind: StrategyKind::Diloco,
            local_steps: 32,
            dyn_local_steps: false,
            global: ServerOpt::new(0.7, 0.9, 1),
            ..Self::halos_paper()
        }
    }

    pub fn diloco_dyn_paper() -> Self {
        StrategyConfig {
            kind: StrategyKind::DilocoDynUpd,
            dyn_local_steps: true,
            ..Self::diloco_paper()
        }
    }

    pub fn sync_sgd() -> Self {
        StrategyConfig {
            kind: StrategyKind::SyncSgd,
            local_steps: 1,
            dyn_local_steps: false,
            ..Self::diloco_paper()
        }
    }

    pub const PRESETS: [&'static str; 5] = [
        "halos-paper",
        "async-paper",
        "diloco-paper",
        "diloco-dynupd-paper",
        "sync-sgd",
    ];

    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "halos-paper" => Self::halos_paper(),
            "async-paper" => Self::async_paper(),
            "diloco-paper" => Self::diloco_paper(),
            "diloco-dynupd-paper" => Self::diloco_dyn_paper(),
            "sync-sgd" => Self::sync_sgd(),
            _ => return None,
        })
    }

    /// Default preset for a strategy kind.
    pub fn for_kind(kind: StrategyKind) -> Self {
        match kind {
            StrategyKind::SyncSgd => Self::sync_sgd(),
            StrategyKind::Diloco => Self::diloco_paper(),
            StrategyKind::DilocoDynUpd => Self::diloco_dyn_paper(),
            StrategyKind::AsyncLocalSgd => Self::async_paper(),
            StrategyKind::Halos => Self::halos_paper(),
        }
    }

    /// Global optimizer with the momentum switch applied.
    pub fn effective_global(&self) -> ServerOpt {
        let mut g = self.global;
        if self.disable_global_momentum {
            g.beta = 0.0;
        }
        g
    }

    /// Whether rounds use speed-scaled local steps.
    pub fn uses_dyn_steps(&self) -> bool {
        match self.kind {
            StrategyKind::SyncSgd | StrategyKind::Diloco => false,
            StrategyKind::DilocoDynUpd => true,
            StrategyKind::AsyncLocalSgd | StrategyKind::Halos => self.dyn_local_steps,
        }
    }

    /// Local steps for one round of a worker with `speed`.
    pub fn steps_for(&self, speed: f64, s_fastest: f64) -> u64 {
        match self.kind {
            StrategyKind::SyncSgd => 1,
            _ if self.uses_dyn_steps() => crate::cluster::dyn_local_steps(self.local_steps, speed, s_fastest),
            _ => self.local_steps,
        }
    }

    /// The fields that influence event timing.
    pub fn timing_view(&self) -> serde_json::Value {
        let k = if self.kind == StrategyKind::Halos { self.k } else { 0 };
        let h = if self.kind == StrategyKind::SyncSgd {
            1
        } else {
            self.local_steps
        };
        serde_json::json!({
            "kind": self.kind,
            "local_steps": h,
            "dyn": self.uses_dyn_steps(),
            "k": k,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_steps == 0 {
            return Err(Error::config("strategy.local_steps", "must be >= 1"));
        }
        if self.kind != StrategyKind::SyncSgd {
            self.global.validate("strategy.global")?;
        }
        if self.kind == StrategyKind::Halos {
            self.local.validate("strategy.local")?;
            if self.k == 0 {
                return Err(Error::config("strategy.k", "must be >= 1"));
            }
            if !(0.0..=1.0).contains(&self.alpha) {
                return Err(Error::config(
                    "strategy.alpha",
                    format!("{} outside [0, 1]", self.alpha),
                ));
            }
        }
        Ok(())
    }
}

/// Warns when local servers serve unequal numbers of workers.
pub fn consistent_grouping_warning(spec: &ClusterSpec) -> Option<String> {
    let sizes: Vec<usize> = spec.lps.iter().map(|l| l.workers.len()).collect();
    let (min, max) = (sizes.iter().min()?, sizes.iter().max()?);
    (min != max)
        .then(|| format!("local servers have unequal worker counts {sizes:?}; hierarchical training may diverge"))
}

/// Global parameter server: applies each incoming displacement and replies
/// with the new model to the sender only.
#[derive(Clone, Debug)]
pub struct GpsState {
    pub model: ParamVector,
    /// Number of updates applied.
    pub version: u64,
    pub nesterov: NesterovState,
}

impl GpsState {
    pub fn new(model: ParamVector, opt: &ServerOpt) -> Result<Self> {
        Ok(GpsState {
            nesterov: opt.build(model.len())?,
            model,
            version: 0,
        })
    }

    /// Applies displacement `Δ`; returns the new global model.
    pub fn on_delta(&mut self, delta: &ParamVector) -> Result<&ParamVector> {
        let g = delta.neg();
        self.model = self.nesterov.apply(&self.model, &g)?;
        self.version += 1;
        Ok(&self.model)
    }
}

/// What an LPS emits after applying a worker displacement.
#[derive(Clone, Debug, PartialEq)]
pub struct LpsOutput {
    /// Model returned to the contributing worker.
    pub reply: ParamVector,
    /// Accumulated displacement for the global server, if `K` updates elapsed.
    pub to_gps: Option<ParamVector>,
}

/// Local parameter server.
#[derive(Clone, Debug)]
pub struct LpsState {
    pub model: ParamVector,
    pub t: u64,
    pub t_last: u64,
    pub k: u64,
    pub alpha: f64,
    pub nesterov: NesterovState,
    /// Model right after the last merge; `Δ` is measured from it.
    pub reference: ParamVector,
}

impl LpsState {
    pub fn new(model: ParamVector, opt: &ServerOpt, k: u64, alpha: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(LpsState {
            nesterov: opt.build(model.len())?,
            reference: model.clone(),
            model,
            t: 0,
            t_last: 0,
            k,
            alpha,
        })
    }

    pub fn on_worker_delta(&mut self, delta: &ParamVector) -> Result<LpsOutput> {
        let g = delta.neg();
        self.model = self.nesterov.apply(&self.model, &g)?;
        self.t += 1;
        let to_gps = if self.t - self.t_last == self.k {
            Some(self.model.sub(&self.reference)?)
        } else {
            None
        };
        Ok(LpsOutput {
            reply: self.model.clone(),
            to_gps,
        })
    }

    pub fn on_global_model(&mut self, global: &ParamVector) -> Result<()> {
        self.t_last = self.t;
        self.model = convex_merge(&self.model, global, self.alpha)?;
        self.reference = self.model.clone();
        Ok(())
    }
}

/// Inner-loop settings shared by all workers.
#[derive(Clone, Copy, Debug)]
pub struct RoundSettings {
    pub clip: Option<f64>,
}

/// Runs `steps` inner steps from `start`; returns `(θ_H − θ_0, steps)`.
///
/// `step_key` is the worker's count of previously drawn mini-batches and keys the
/// data stream; `lr(j)` is the rate of the `j`-th step of this round.
#[allow(clippy::too_many_arguments)]
pub fn worker_round(
    workload: &Workload,
    worker: usize,
    inner: &mut InnerOptState,
    start: &ParamVector,
    steps: u64,
    step_key: u64,
    lr: impl Fn(u64) -> f64,
    settings: RoundSettings,
) -> Result<(ParamVector, u64)> {
    let mut theta = start.as_slice().to_vec();
    let mut grad = vec![0.0; theta.len()];
    for j in 0..steps {
        workload
            .grad_into(&theta, worker, step_key + j, &mut grad)
            .map_err(|e| Error::NonFinite(format!("worker {worker}, local step {j}: {e}")))?;
        if let Some(max) = settings.clip {
            clip_in_place(&mut grad, max);
        }
        inner.step_in_place(&mut theta, &grad, lr(j));
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("worker {worker}, local step {j}")));
        }
    }
    let end = ParamVector::from_computed(theta, "worker_round")?;
    Ok((end.sub(start)?, steps))
}

/// One synchronous data-parallel step: mean of the workers' gradients at
/// `model`, clipped once, then one optimizer step.
pub fn sync_sgd_step(
    model: &ParamVector,
    grads: &[ParamVector],
    inner: &mut InnerOptState,
    lr: f64,
    settings: RoundSettings,
) -> Result<ParamVector> {
    let refs: Vec<&ParamVector> = grads.iter().collect();
    let mut g = ParamVector::mean(&refs)?.into_vec();
    if let Some(max) = settings.clip {
        clip_in_place(&mut g, max);
    }
    let mut theta = model.as_slice().to_vec();
    inner.step_in_place(&mut theta, &g, lr);
    ParamVector::from_computed(theta, "sync_sgd_step")
}

/// Outer DiLoCo step: averages worker displacements and applies the outer optimizer.
pub fn diloco_outer_step(gps: &mut GpsState, deltas: &[ParamVector]) -> Result<()> {
    let refs: Vec<&ParamVector> = deltas.iter().collect();
    let mean = ParamVector::mean(&refs)?;
    gps.on_delta(&mean)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::InnerOptKind;
    use crate::workload::{QuadraticSpec, VectorInit, WorkloadSpec};
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn unit() -> ServerOpt {
        ServerOpt::new(1.0, 0.0, 1)
    }

    #[test]
    fn presets_match_reference_table() {
        let h = StrategyConfig::halos_paper();
        assert_eq!((h.global.lr, h.global.beta, h.global.delay), (0.15, 0.5, 2));
        assert_eq!((h.local.lr, h.local.beta, h.local.delay), (0.2, 0.9, 16));
        assert_eq!((h.k, h.alpha, h.local_steps, h.dyn_local_steps), (32, 0.25, 8, true));
        let a = StrategyConfig::async_paper();
        assert_eq!(
            (a.global.lr, a.global.beta, a.global.delay, a.local_steps),
            (0.05, 0.9, 32, 32)
        );
        let d = StrategyConfig::diloco_paper();
        assert_eq!(
            (d.global.lr, d.global.beta, d.global.delay, d.local_steps),
            (0.7, 0.9, 1, 32)
        );
        assert!(!d.uses_dyn_steps());
        assert!(StrategyConfig::diloco_dyn_paper().uses_dyn_steps());
        for name in StrategyConfig::PRESETS {
            StrategyConfig::preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn nesterov_lr_is_table_rate_times_delay() {
        let s = StrategyConfig::halos_paper().local.build(3).unwrap();
        assert!((s.lr - 3.2).abs() < 1e-15);
        assert_eq!(s.delay, 16);
    }

    #[test]
    fn validation_names_fields() {
        let mut c = StrategyConfig::halos_paper();
        c.alpha = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("strategy.alpha"));
        let mut c = StrategyConfig::halos_paper();
        c.local.beta = 1.0;
        assert!(c.validate().unwrap_err().to_string().contains("strategy.local.beta"));
        let mut c = StrategyConfig::diloco_paper();
        c.local_steps = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(
            "async-local-sgd".parse::<StrategyKind>().unwrap(),
            StrategyKind::AsyncLocalSgd
        );
        assert_eq!("HALOS".parse::<StrategyKind>().unwrap(), StrategyKind::Halos);
        assert!("fedavg".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn k_one_sends_every_update() {
        let mut lps = LpsState::new(pv(&[0.0]), &unit(), 1, 1.0).unwrap();
        let out = lps.on_worker_delta(&pv(&[1.0])).unwrap();
        assert_eq!(out.to_gps, Some(pv(&[1.0])));
        lps.on_global_model(&pv(&[1.0])).unwrap();
        let out = lps.on_worker_delta(&pv(&[2.0])).unwrap();
        assert_eq!(out.to_gps, Some(pv(&[2.0])));
    }

    #[test]
    fn k_gates_sends_and_counts_from_merge() {
        let mut lps = LpsState::new(pv(&[0.0]), &unit(), 3, 0.5).unwrap();
        let sends: Vec<bool> = (0..5)
            .map(|_| lps.on_worker_delta(&pv(&[1.0])).unwrap().to_gps.is_some())
            .collect();
        assert_eq!(sends, vec![false, false, true, false, false]);
        lps.on_global_model(&pv(&[10.0])).unwrap();
        assert_eq!(lps.t_last, 5);
        assert_eq!(lps.model, pv(&[7.5]));
        let sends: Vec<Option<ParamVector>> = (0..3)
            .map(|_| lps.on_worker_delta(&pv(&[1.0])).unwrap().to_gps)
            .collect();
        assert_eq!(sends[2], Some(pv(&[3.0])));
        assert!(sends[0].is_none() && sends[1].is_none());
    }

    #[test]
    fn unit_rate_lps_applies_displacement() {
        let mut lps = LpsState::new(pv(&[1.0, 2.0]), &unit(), 4, 1.0).unwrap();
        let out = lps.on_worker_delta(&pv(&[0.5, -0.25])).unwrap();
        assert_eq!(out.reply, pv(&[1.5, 1.75]));
    }

    #[test]
    fn merge_boundaries() {
        let mut lps = LpsState::new(pv(&[9.0, 9.0]), &unit(), 4, 1.0).unwrap();
        lps.on_global_model(&pv(&[2.0, 3.0])).unwrap();
        assert_eq!(lps.model, pv(&[2.0, 3.0]));
        let mut lps = LpsState::new(pv(&[9.0, 9.0]), &unit(), 4, 0.0).unwrap();
        lps.on_global_model(&pv(&[2.0, 3.0])).unwrap();
        assert_eq!(lps.model, pv(&[9.0, 9.0]));
    }

    #[test]
    fn gps_pass_through_and_scalar_momentum_oracle() {
        let mut gps = GpsState::new(pv(&[1.0]), &unit()).unwrap();
        assert_eq!(gps.on_delta(&pv(&[0.5])).unwrap(), &pv(&[1.5]));
        assert_eq!(gps.version, 1);

        let (eta, beta) = (0.3, 0.5);
        let mut gps = GpsState::new(pv(&[0.0]), &ServerOpt::new(eta, beta, 1)).unwrap();
        let (mut theta, mut m) = (0.0f64, 0.0f64);
        for _ in 0..20 {
            gps.on_delta(&pv(&[1.0])).unwrap();
            let g = -1.0;
            m = beta * m + g;
            theta -= eta * ((1.0 - beta) * g + beta * m);
            assert_eq!(gps.model.as_slice()[0], theta);
        }
        // Per-step displacement tends to η·Δ·(1 − β + β/(1 − β)).
        let before = gps.model.as_slice()[0];
        gps.on_delta(&pv(&[1.0])).unwrap();
        let step = gps.model.as_slice()[0] - before;
        assert!((step - eta * (1.0 - beta + beta / (1.0 - beta))).abs() < 1e-5);
    }

    fn quad(dim: usize) -> Workload {
        let mut spec = QuadraticSpec::isotropic(dim);
        spec.hessian = crate::workload::Hessian::Diagonal((1..=dim).map(|i| i as f64 * 0.5).collect());
        spec.theta_star = VectorInit::Values((0..dim).map(|i| i as f64 - 1.0).collect());
        Workload::build(&WorkloadSpec::Quadratic(spec), 2, 1).unwrap()
    }

    #[test]
    fn single_step_round_is_negative_scaled_gradient() {
        let w = quad(3);
        let start = pv(&[2.0, -1.0, 0.5]);
        let (g, _) = w.grad(&start, 0, 0).unwrap();
        let mut inner = InnerOptState::new(InnerOptKind::PlainSgd, 3);
        let settings = RoundSettings { clip: Some(1.0) };
        let (delta, steps) = worker_round(&w, 0, &mut inner, &start, 1, 0, |_| 0.1, settings).unwrap();
        assert_eq!(steps, 1);
        let clipped = crate::optim::clip_gradient(&g, 1.0);
        let expected: Vec<f64> = clipped.as_slice().iter().map(|x| -0.1 * x).collect();
        for (a, b) in delta.as_slice().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn round_matches_iterated_gradient_descent() {
        let w = quad(4);
        let start = pv(&[0.3, 0.1, -0.2, 0.4]);
        let mut inner = InnerOptState::new(InnerOptKind::PlainSgd, 4);
        let settings = RoundSettings { clip: None };
        let (delta, _) = worker_round(&w, 1, &mut inner, &start, 8, 0, |_| 0.05, settings).unwrap();
        let a: Vec<f64> = (1..=4).map(|i| i as f64 * 0.5).collect();
        let c: Vec<f64> = (0..4).map(|i| i as f64 - 1.0).collect();
        let mut x = start.as_slice().to_vec();
        for _ in 0..8 {
            for j in 0..4 {
                x[j] -= 0.05 * a[j] * (x[j] - c[j]);
            }
        }
        for j in 0..4 {
            assert!((delta.as_slice()[j] - (x[j] - start.as_slice()[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_round_is_zero() {
        let w = quad(2);
        let Workload::Quadratic(q) = &w else { unreachable!() };
        let start = pv(&q.global_optimum());
        let mut inner = InnerOptState::new(InnerOptKind::PlainSgd, 2);
        let (delta, _) = worker_round(&w, 0, &mut inner, &start, 16, 0, |_| 0.3, RoundSettings { clip: None }).unwrap();
        assert!(delta.as_slice().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn diloco_single_worker_unit_outer_is_plain_sgd() {
        let w = quad(2);
        let start = pv(&[1.0, 1.0]);
        let mut gps = GpsState::new(start.clone(), &unit()).unwrap();
        let mut inner = InnerOptState::new(InnerOptKind::PlainSgd, 2);
        let (delta, _) = worker_round(&w, 0, &mut inner, &start, 1, 0, |_| 0.1, RoundSettings { clip: None }).unwrap();
        diloco_outer_step(&mut gps, &[delta]).unwrap();
        let (g, _) = w.grad(&start, 0, 0).unwrap();
        for j in 0..2 {
            assert!((gps.model.as_slice()[j] - (1.0 - 0.1 * g.as_slice()[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn grouping_warning() {
        let spec = ClusterSpec::paper_default();
        assert!(consistent_grouping_warning(&spec).is_none());
        let mut spec = ClusterSpec::paper_default();
        let moved = spec.lps[0].workers.pop().unwrap();
        spec.lps[1].workers.push(moved);
        assert!(consistent_grouping_warning(&spec).is_some());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        /// Processing an inbox equals a fold over its items in arrival order.
        #[test]
        fn lps_queue_linearizable(
            items in prop::collection::vec((any::<bool>(), prop::collection::vec(-1.0f64..1.0, 3)), 1..40),
            k in 1u64..6,
            alpha in 0.0f64..=1.0,
            beta in 0.0f64..0.95,
        ) {
            let opt = ServerOpt::new(0.3, beta, 2);
            let init = pv(&[0.5, -0.5, 0.0]);
            let mut lps = LpsState::new(init.clone(), &opt, k, alpha).unwrap();
            for (is_global, v) in &items {
                if *is_global {
                    lps.on_global_model(&pv(v)).unwrap();
                } else {
                    lps.on_worker_delta(&pv(v)).unwrap();
                }
            }
            // Independent fold over the same queue.
            let mut model = init.as_slice().to_vec();
            let mut reference = model.clone();
            let (mut m, mut a, mut c) = (vec![0.0; 3], vec![0.0; 3], 0u64);
            let (eta, d) = (0.6, 2u64);
            let (mut t, mut t_last) = (0u64, 0u64);
            let mut sent = Vec::new();
            for (is_global, v) in &items {
                if *is_global {
                    t_last = t;
                    for j in 0..3 {
                        model[j] = (1.0 - alpha) * model[j] + alpha * v[j];
                    }
                    reference = model.clone();
                } else {
                    c += 1;
                    for j in 0..3 {
                        let g = -v[j];
                        a[j] += g;
                        if c % d == 0 {
                            m[j] = beta * m[j] + a[j] / d as f64;
                            model[j] = model[j] - (eta / d as f64) * (1.0 - beta) * g - eta * beta * m[j];
                            a[j] = 0.0;
                        } else {
                            model[j] -= (eta / d as f64) * (1.0 - beta) * g;
                        }
                    }
                    t += 1;
                    if t - t_last == k {
                        sent.push(t);
                    }
                }
            }
            for j in 0..3 {
                prop_assert!((lps.model.as_slice()[j] - model[j]).abs() <= 1e-12);
                prop_assert!((lps.reference.as_slice()[j] - reference[j]).abs() <= 1e-12);
            }
            prop_assert_eq!((lps.t, lps.t_last), (t, t_last));
        }

        /// A merge with α < 1 keeps local progress made since the send.
        #[test]
        fn merge_retains_local_updates(alpha in 0.01f64..0.99, d in 0.1f64..2.0) {
            let mut lps = LpsState::new(pv(&[0.0]), &unit(), 1, alpha).unwrap();
            let out = lps.on_worker_delta(&pv(&[d])).unwrap();
            let global = out.to_gps.unwrap();
            lps.on_worker_delta(&pv(&[d])).unwrap();
            lps.on_global_model(&global).unwrap();
            prop_assert!(lps.model != global);
        }
    }
}
