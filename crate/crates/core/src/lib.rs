//! Deterministic, trace-driven simulation of hierarchical asynchronous local SGD
//! and its synchronous and asynchronous baselines.
//!
//! A run has two phases. [`engine::generate_trace`] plays the timing model of a
//! [`cluster::ClusterSpec`] forward and records every round start, message and
//! server update as an ordered event trace. [`engine::replay`] then executes the
//! numerics in trace order on a [`workload::Workload`], validating each event
//! against the timing model. Traces depend only on timing-relevant settings, so a
//! sweep over momentum or merge weights replays one trace many times.
//!
//! Strategies ([`strategy::StrategyKind`]):
//!
//! * `halos`: workers push displacements to a regional server with local
//!   Nesterov momentum; it forwards accumulated updates to a global server every
//!   `K` updates and merges the reply with weight `α`.
//! * `async_local_sgd`: workers push to the global server directly.
//! * `diloco` and `diloco_dyn_upd`: barrier-synchronized rounds with an outer
//!   optimizer, the latter with speed-scaled local steps.
//! * `sync_sgd`: one all-reduced gradient step per round.
//!
//! [`config::RunConfig`] loads TOML configs with presets and dotted overrides,
//! [`run`] orchestrates runs, comparisons and sweeps, and [`analysis`] holds
//! reports, time-to-loss, sweep tables and the convergence bound.
//!
//! ```no_run
//! use halos::config::RunConfig;
//!
//! let cfg = RunConfig::load("configs/reference_quadratic.toml", &["beta_g=0.3".into()])?;
//! let out = halos::run::execute(&cfg)?;
//! println!("final loss {:?}", out.report().final_loss);
//! # Ok::<(), halos::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod engine;
pub mod error;
pub mod optim;
pub mod params;
pub mod run;
pub mod strategy;
pub mod workload;

pub use error::{Error, Result};
