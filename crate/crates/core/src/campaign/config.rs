use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CampaignError;
use crate::adapter::TargetConfig;
use crate::flipcore::{FlipEnv, DEFAULT_COVERAGE_VAR, DEFAULT_FLIP_VAR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    WorkUnits,
    WallMs,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::WorkUnits => "work_units",
            Metric::WallMs => "wall_ms",
        }
    }
}

fn default_dot() -> PathBuf {
    PathBuf::from(".")
}
fn default_true() -> bool {
    true
}
fn default_metric() -> Metric {
    Metric::WorkUnits
}
fn default_repeats() -> u32 {
    10
}
fn default_threshold() -> f64 {
    0.10
}
fn default_workers() -> usize {
    1
}
fn default_flip_var() -> String {
    DEFAULT_FLIP_VAR.to_string()
}
fn default_coverage_var() -> String {
    DEFAULT_COVERAGE_VAR.to_string()
}

/// Campaign settings, usually read from a TOML file.
///
/// Relative paths are resolved against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub target: TargetConfig,
    /// Directory with `queries/*.sql`.
    #[serde(default = "default_dot")]
    pub workload_dir: PathBuf,
    #[serde(default)]
    pub validation_dir: Option<PathBuf>,
    #[serde(default)]
    pub manifest_path: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub cost_gate: bool,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    #[serde(default = "default_threshold")]
    pub gap_threshold: f64,
    #[serde(default)]
    pub plan_rules: Option<PathBuf>,
    /// Parallel flip evaluations; only honored for the work_units metric.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Ignored when a manifest is given; the manifest names the variables.
    #[serde(default = "default_flip_var")]
    pub flip_var: String,
    #[serde(default = "default_coverage_var")]
    pub coverage_var: String,
}

impl CampaignConfig {
    /// Defaults for everything except the target.
    pub fn new(target: TargetConfig, workload_dir: impl Into<PathBuf>) -> Self {
        CampaignConfig {
            target,
            workload_dir: workload_dir.into(),
            validation_dir: None,
            manifest_path: None,
            cost_gate: true,
            metric: Metric::WorkUnits,
            repeats: default_repeats(),
            gap_threshold: default_threshold(),
            plan_rules: None,
            workers: 1,
            flip_var: default_flip_var(),
            coverage_var: default_coverage_var(),
        }
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CampaignError> {
        let mut cfg: CampaignConfig = toml::from_str(text).map_err(|e| CampaignError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = fs::read_to_string(path).map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.workload_dir);
        for p in [&mut self.validation_dir, &mut self.manifest_path, &mut self.plan_rules]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        self.target.resolve_paths(base);
    }

    pub fn check(&self) -> Result<(), CampaignError> {
        if self.repeats < 1 {
            return Err(CampaignError::Config("repeats must be >= 1".into()));
        }
        if !(self.gap_threshold > 0.0 && self.gap_threshold < 1.0) {
            return Err(CampaignError::Config(format!(
                "gap_threshold must be in (0, 1), got {}",
                self.gap_threshold
            )));
        }
        if self.workers < 1 {
            return Err(CampaignError::Config("workers must be >= 1".into()));
        }
        self.flip_env()
            .validate()
            .map_err(|e| CampaignError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn flip_env(&self) -> FlipEnv {
        FlipEnv {
            flip_var: self.flip_var.clone(),
            coverage_var: self.coverage_var.clone(),
        }
    }

    /// Worker count actually used.
    pub fn effective_workers(&self) -> usize {
        match self.metric {
            Metric::WorkUnits => self.workers,
            Metric::WallMs => 1,
        }
    }
}
