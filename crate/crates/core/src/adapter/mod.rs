//! Explain/execute contract between a campaign and a system under test.
//!
//! Two targets are provided: [`MinidbTarget`] runs the bundled engine in
//! process, [`ExternalTarget`] drives any binary through command templates.

mod external;
mod minidb_target;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flipcore::{CoverageRecord, FlipEnv, FlipSelection};
use crate::minidb::ResultDigest;

pub use external::{ExternalTarget, QUERY_PLACEHOLDER};
pub use minidb_target::MinidbTarget;

/// One observation of the target: an explain, an execute, or both merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub est_cost: Option<f64>,
    pub work_units: Option<u64>,
    pub wall_ms: f64,
    pub digest: Option<ResultDigest>,
    pub coverage: CoverageRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_text: Option<String>,
}

impl Measurement {
    pub fn empty() -> Self {
        Measurement {
            est_cost: None,
            work_units: None,
            wall_ms: 0.0,
            digest: None,
            coverage: CoverageRecord::new(),
            plan_text: None,
        }
    }

    /// Copies the estimate and plan text from an explain measurement.
    pub fn with_explain(mut self, explain: &Measurement) -> Self {
        self.est_cost = explain.est_cost;
        self.plan_text = explain.plan_text.clone();
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error("target failed (exit {}): {stderr}", code.map_or("signal".to_string(), |c| c.to_string()))]
    Target { code: Option<i32>, stderr: String },
    #[error("could not parse target output: {0}")]
    Parse(String),
    #[error("target timed out after {0} s")]
    Timeout(f64),
    #[error("nondeterministic target: {0}")]
    Nondeterministic(String),
}

impl TargetError {
    /// Short name used in verdicts, e.g. `error(timeout)`.
    pub fn kind(&self) -> &'static str {
        match self {
            TargetError::Target { .. } => "target",
            TargetError::Parse(_) => "parse",
            TargetError::Timeout(_) => "timeout",
            TargetError::Nondeterministic(_) => "nondeterministic",
        }
    }

    pub(crate) fn io(context: &str, e: impl std::fmt::Display) -> Self {
        TargetError::Target {
            code: None,
            stderr: format!("{context}: {e}"),
        }
    }
}

pub trait Target: Send + Sync {
    /// Estimated cost and plan text for `query` under `selection`.
    fn explain(&self, selection: FlipSelection, query: &str) -> Result<Measurement, TargetError>;

    /// Runs `query`, logging executed flip points to `coverage_path`.
    fn execute(&self, selection: FlipSelection, query: &str, coverage_path: &Path) -> Result<Measurement, TargetError>;

    /// Number of flip points compiled into the target when there is no manifest.
    fn builtin_flip_points(&self) -> Option<usize> {
        None
    }
}

fn default_timeout() -> f64 {
    60.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetConfig {
    Minidb {
        /// Directory of `<table>.csv` files.
        db: PathBuf,
    },
    External(ExternalConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    pub explain_cmd: String,
    pub execute_cmd: String,
    /// One capture group holding the estimated total cost.
    pub cost_pattern: String,
    #[serde(default)]
    pub work_units_pattern: Option<String>,
    /// Captures a 16-digit hex digest; an optional second group captures the row count.
    #[serde(default)]
    pub digest_pattern: Option<String>,
    #[serde(default)]
    pub workdir: Option<PathBuf>,
    #[serde(default)]
    pub extra_env: BTreeMap<String, String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    /// Every call already spawns a fresh process; kept for server-style targets.
    #[serde(default = "default_true")]
    pub restart_between_flips: bool,
}

impl TargetConfig {
    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        match self {
            TargetConfig::Minidb { db } => {
                if db.is_relative() {
                    *db = base.join(&*db);
                }
            }
            TargetConfig::External(cfg) => {
                let dir = cfg.workdir.take().unwrap_or_default();
                cfg.workdir = Some(if dir.is_relative() { base.join(dir) } else { dir });
            }
        }
    }
}

#[derive(Debug, Error)]
#[error("target config: {0}")]
pub struct ConfigError(pub String);

/// Builds a target from its configuration.
pub fn open_target(config: &TargetConfig, env: &FlipEnv) -> Result<Box<dyn Target>, ConfigError> {
    Ok(match config {
        TargetConfig::Minidb { db } => Box::new(MinidbTarget::open(db).map_err(|e| ConfigError(e.to_string()))?),
        TargetConfig::External(cfg) => Box::new(ExternalTarget::new(cfg.clone(), env.clone())?),
    })
}
