//! TOML run configuration with presets and dotted-path overrides.
//!
//! `cluster` and `strategy` accept a preset name or a table. A table may carry a
//! `preset` key whose values are overridden by the remaining keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::cluster::ClusterSpec;
use crate::engine::{fnv1a64, EvalConfig, ReplayOptions, StopRule, TimingConfig};
use crate::error::{Error, Result};
use crate::optim::InnerConfig;
use crate::strategy::{StrategyConfig, StrategyKind};
use crate::workload::WorkloadSpec;

/// Environment variable overriding `output.dir`.
pub const OUT_DIR_ENV: &str = "HALOS_OUT_DIR";

pub const CLUSTER_PRESETS: [&str; 1] = ["paper-default"];

pub fn cluster_preset(name: &str) -> Option<ClusterSpec> {
    (name == "paper-default").then(ClusterSpec::paper_default)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Also write the event trace (gzip NDJSON).
    #[serde(default)]
    pub write_trace: bool,
    /// Retain every snapshot so staleness can be measured.
    #[serde(default)]
    pub staleness: bool,
}

/// A fully resolved run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub cluster: ClusterSpec,
    pub strategy: StrategyConfig,
    pub workload: WorkloadSpec,
    pub inner: InnerConfig,
    pub stop: StopRule,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Loss used for time-to-loss summaries and early stopping.
    #[serde(default)]
    pub target_loss: Option<f64>,
    /// Stop replay once `target_loss` is reached.
    #[serde(default)]
    pub stop_at_target: bool,
    /// Replay worker threads; absent means all cores.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Parses TOML text, expands presets, applies `key=value` overrides and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = text
            .parse::<toml::Table>()
            .map(Value::Table)
            .map_err(|e| Error::config("<file>", e.to_string()))?;
        expand_presets(&mut value)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text, overrides)
    }

    fn from_value(value: Value) -> Result<Self> {
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same config with a single dotted-path override.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let mut value = Value::try_from(self).map_err(|e| Error::config("<config>", e.to_string()))?;
        apply_override(&mut value, assignment)?;
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.strategy.validate()?;
        self.workload.validate()?;
        self.inner.validate()?;
        self.stop.validate()?;
        self.eval.validate()?;
        if self.strategy.kind == StrategyKind::Halos && self.cluster.lps.is_empty() {
            return Err(Error::config(
                "cluster.lps",
                "hierarchical training needs at least one local server",
            ));
        }
        if let Some(t) = self.target_loss {
            if !t.is_finite() {
                return Err(Error::config("target_loss", "must be finite"));
            }
        }
        if self.stop_at_target && self.target_loss.is_none() {
            return Err(Error::config("stop_at_target", "needs target_loss"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be positive"));
        }
        Ok(())
    }

    /// Canonical JSON of everything except output locations.
    pub fn canonical_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("output");
            m.remove("threads");
        }
        serde_json::to_vec(&v).expect("json value serializes")
    }

    pub fn hash(&self) -> u64 {
        fnv1a64(&self.canonical_json())
    }

    pub fn timing(&self) -> TimingConfig {
        TimingConfig::new(self.cluster.clone(), self.strategy.clone(), self.stop, self.seed)
    }

    pub fn replay_options(&self) -> ReplayOptions {
        ReplayOptions {
            inner: self.inner,
            eval: self.eval,
            threads: self.threads,
            retain_snapshots: self.output.staleness,
            record_global_trajectory: false,
            target_loss: if self.stop_at_target { self.target_loss } else { None },
        }
    }

    /// Output directory, honoring the environment override.
    pub fn output_dir(&self) -> PathBuf {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
            return PathBuf::from(dir);
        }
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("halos-out"))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("<config>", e.to_string()))
    }
}

fn to_toml<T: Serialize>(v: &T, field: &str) -> Result<Value> {
    Value::try_from(v).map_err(|e| Error::config(field, e.to_string()))
}

fn expand_presets(root: &mut Value) -> Result<()> {
    let Some(table) = root.as_table_mut() else {
        return Err(Error::config("<file>", "top level must be a table"));
    };
    if let Some(v) = table.get_mut("cluster") {
        expand_one(
            v,
            "cluster",
            |name| cluster_preset(name).map(|c| to_toml(&c, "cluster")),
            &CLUSTER_PRESETS,
        )?;
    }
    if let Some(v) = table.get_mut("strategy") {
        expand_one(
            v,
            "strategy",
            |name| StrategyConfig::preset(name).map(|s| to_toml(&s, "strategy")),
            &StrategyConfig::PRESETS,
        )?;
    }
    Ok(())
}

fn expand_one(
    v: &mut Value,
    field: &str,
    lookup: impl Fn(&str) -> Option<Result<Value>>,
    known: &[&str],
) -> Result<()> {
    let unknown = |name: &str| Error::config(field, format!("unknown preset `{name}`; known: {}", known.join(", ")));
    match v {
        Value::String(name) => {
            *v = lookup(name).ok_or_else(|| unknown(name))??;
        }
        Value::Table(t) => {
            if let Some(p) = t.remove("preset") {
                let name = p
                    .as_str()
                    .ok_or_else(|| Error::config(format!("{field}.preset"), "must be a string"))?;
                let mut base = lookup(name).ok_or_else(|| unknown(name))??;
                merge(&mut base, Value::Table(std::mem::take(t)));
                *v = base;
            }
        }
        _ => return Err(Error::config(field, "must be a preset name or a table")),
    }
    Ok(())
}

/// Deep-merges `over` into `base`; tables merge key by key, other values replace.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Short names accepted by `--sweep` and `--set`.
pub fn axis_path(axis: &str) -> &str {
    match axis {
        "beta_g" => "strategy.global.beta",
        "beta_l" => "strategy.local.beta",
        "eta_g" => "strategy.global.lr",
        "eta_l" => "strategy.local.lr",
        "alpha" => "strategy.alpha",
        "k" | "K" => "strategy.k",
        "h" | "H" => "strategy.local_steps",
        "lr" => "inner.lr",
        other => other,
    }
}

/// Parses a literal as TOML, falling back to a bare string.
fn parse_literal(raw: &str) -> Value {
    format!("x = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `path=value`, creating intermediate tables as needed.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key.path=value"))?;
    let path = axis_path(path.trim());
    let mut value = parse_literal(raw.trim());
    if matches!(path, "cluster" | "strategy") {
        expand_one(
            &mut value,
            path,
            |name| match path {
                "cluster" => cluster_preset(name).map(|c| to_toml(&c, "cluster")),
                _ => StrategyConfig::preset(name).map(|s| to_toml(&s, "strategy")),
            },
            if path == "cluster" {
                &CLUSTER_PRESETS
            } else {
                &StrategyConfig::PRESETS
            },
        )?;
    }
    let keys: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for (i, key) in keys.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::config(keys[..i].join("."), "is not a table"))?;
        if i + 1 == keys.len() {
            // Integers written where floats are expected stay valid.
            if let (Some(Value::Float(_)), Value::Integer(n)) = (table.get(*key), &value) {
                value = Value::Float(*n as f64);
            }
            table.insert(key.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(key.to_string())
            .or_insert_with(|| Value::Table(toml::Table::new()));
    }
    Err(Error::config(assignment, "empty override path"))
}
