use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::CampaignError;
use crate::adapter::{Target, TargetError};
use crate::flipcore::FlipSelection;
use crate::minidb::ResultDigest;

/// A query file from a workload or validation directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadQuery {
    /// File stem, e.g. `q1` for `queries/q1.sql`.
    pub id: String,
    pub sql: String,
}

/// Reads `<dir>/queries/*.sql` in file-name order. A missing `queries`
/// directory yields an empty list.
pub fn load_queries(dir: &Path) -> Result<Vec<WorkloadQuery>, CampaignError> {
    if !dir.is_dir() {
        return Err(CampaignError::Config(format!("{} is not a directory", dir.display())));
    }
    let qdir = dir.join("queries");
    if !qdir.is_dir() {
        return Ok(Vec::new());
    }
    let io = |e: std::io::Error| CampaignError::Io(format!("{}: {e}", qdir.display()));
    let mut paths: Vec<PathBuf> = fs::read_dir(&qdir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sql") && p.is_file())
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let sql = fs::read_to_string(&p).map_err(|e| CampaignError::Io(format!("{}: {e}", p.display())))?;
            Ok(WorkloadQuery {
                id: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                sql: sql.trim().to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Validation {
    Pass,
    Fail { query: String, reason: String },
}

impl Validation {
    pub fn passed(&self) -> bool {
        matches!(self, Validation::Pass)
    }

    pub fn fail(query: &str, reason: impl Into<String>) -> Self {
        Validation::Fail {
            query: query.to_string(),
            reason: reason.into(),
        }
    }

    fn error(query: &str, e: &TargetError) -> Self {
        Validation::fail(query, format!("error({}): {e}", e.kind()))
    }
}

/// Compares two digests; `None` when they agree.
pub fn digest_mismatch(baseline: &ResultDigest, flipped: &ResultDigest) -> Option<String> {
    if baseline.row_count != flipped.row_count {
        Some(format!("row count {} != {}", flipped.row_count, baseline.row_count))
    } else if baseline.digest != flipped.digest {
        Some(format!("digest {flipped} != {baseline}"))
    } else {
        None
    }
}

fn digest_of(
    target: &dyn Target,
    selection: FlipSelection,
    sql: &str,
    cov: &Path,
) -> Result<ResultDigest, TargetError> {
    target
        .execute(selection, sql, cov)?
        .digest
        .ok_or_else(|| TargetError::Parse("execute returned no digest".into()))
}

/// Differential check of flipped runs against baseline digests over a
/// fixed query suite. Baseline digests are computed once.
pub struct Validator<'t> {
    target: &'t dyn Target,
    queries: Vec<WorkloadQuery>,
    scratch: PathBuf,
    baseline: OnceLock<Result<Vec<ResultDigest>, Validation>>,
}

impl<'t> Validator<'t> {
    /// `scratch` is a writable directory for coverage files.
    pub fn new(target: &'t dyn Target, queries: Vec<WorkloadQuery>, scratch: &Path) -> Self {
        Validator {
            target,
            queries,
            scratch: scratch.to_path_buf(),
            baseline: OnceLock::new(),
        }
    }

    pub fn queries(&self) -> &[WorkloadQuery] {
        &self.queries
    }

    fn baseline(&self) -> &Result<Vec<ResultDigest>, Validation> {
        self.baseline.get_or_init(|| {
            let cov = self.scratch.join("validate-baseline.cov");
            self.queries
                .iter()
                .map(|q| {
                    digest_of(self.target, FlipSelection::NONE, &q.sql, &cov).map_err(|e| Validation::error(&q.id, &e))
                })
                .collect()
        })
    }

    /// Runs the suite with `flip_id` flipped; fails on the first mismatch.
    pub fn validate(&self, flip_id: u32) -> Validation {
        if self.queries.is_empty() {
            log::warn!("validation suite is empty; flip {flip_id} passes by default");
            return Validation::Pass;
        }
        let baseline = match self.baseline() {
            Ok(b) => b,
            Err(fail) => return fail.clone(),
        };
        let cov = self.scratch.join(format!("validate-{flip_id}.cov"));
        for (q, base) in self.queries.iter().zip(baseline) {
            match digest_of(self.target, FlipSelection::of(flip_id), &q.sql, &cov) {
                Ok(d) => {
                    if let Some(reason) = digest_mismatch(base, &d) {
                        return Validation::fail(&q.id, reason);
                    }
                }
                Err(e) => return Validation::error(&q.id, &e),
            }
        }
        Validation::Pass
    }
}

/// One-shot validation of a single flip over `<validation_dir>/queries`.
pub fn validate_functionality(
    target: &dyn Target,
    flip_id: u32,
    validation_dir: &Path,
) -> Result<Validation, CampaignError> {
    let scratch = tempfile::tempdir().map_err(|e| CampaignError::Io(e.to_string()))?;
    let validator = Validator::new(target, load_queries(validation_dir)?, scratch.path());
    Ok(validator.validate(flip_id))
}
