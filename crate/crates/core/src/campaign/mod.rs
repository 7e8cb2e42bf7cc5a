//! Baseline run, coverage-gated flips, functionality validation, verdicts.

mod config;
mod measure;
mod rules;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{open_target, Measurement, Target, TargetError};
use crate::flipcore::FlipSelection;
use crate::instrument::Manifest;

pub use config::{CampaignConfig, Metric};
pub use measure::{lower_median, measure_with_repeats, metric_value};
pub use rules::{check_plan_invariants, load_rules, parse_rules, PlanRule, Violation};
pub use validate::{digest_mismatch, load_queries, validate_functionality, Validation, Validator, WorkloadQuery};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Issue,
    NoGain,
    FunctionalityAltering,
    Error(String),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Issue => f.write_str("issue"),
            Verdict::NoGain => f.write_str("no_gain"),
            Verdict::FunctionalityAltering => f.write_str("functionality_altering"),
            Verdict::Error(kind) => write!(f, "error({kind})"),
        }
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "issue" => Verdict::Issue,
            "no_gain" => Verdict::NoGain,
            "functionality_altering" => Verdict::FunctionalityAltering,
            _ => match s.strip_prefix("error(").and_then(|r| r.strip_suffix(')')) {
                Some(kind) => Verdict::Error(kind.to_string()),
                None => return Err(format!("unknown verdict {s:?}")),
            },
        })
    }
}

impl Serialize for Verdict {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Ratios are numbers in JSON except infinity, written as `"inf"`.
pub mod ratio_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(r) if r.is_infinite() => s.serialize_str("inf"),
            Some(r) => s.serialize_f64(*r),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Raw>::deserialize(d)? {
            None => Ok(None),
            Some(Raw::Num(r)) => Ok(Some(r)),
            Some(Raw::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
            Some(Raw::Text(t)) => Err(serde::de::Error::custom(format!("bad ratio {t:?}"))),
        }
    }
}

/// Baseline/flipped metric ratio and the resulting verdict.
///
/// A zero flipped metric gives an infinite ratio; two zeros give 1.
pub fn decide_verdict(baseline: f64, flipped: f64, gap_threshold: f64, validation: &Validation) -> (Verdict, f64) {
    let ratio = if flipped == 0.0 {
        if baseline == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        baseline / flipped
    };
    let verdict = if !validation.passed() {
        Verdict::FunctionalityAltering
    } else if ratio >= 1.0 + gap_threshold {
        Verdict::Issue
    } else {
        Verdict::NoGain
    };
    (verdict, ratio)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipOutcome {
    pub query_id: String,
    pub flip_id: u32,
    pub baseline: Measurement,
    pub flipped: Measurement,
    pub cost_gated_out: bool,
    pub verdict: Verdict,
    #[serde(with = "ratio_serde")]
    pub ratio: Option<f64>,
    pub validation: Option<Validation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Baseline observations for one workload query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBaseline {
    pub query_id: String,
    pub sql: String,
    pub baseline: Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedQuery {
    pub query_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub metric: Metric,
    pub gap_threshold: f64,
    pub cost_gate: bool,
    pub repeats: u32,
    /// Number of flippable sites: the manifest's, or the target's built-in count.
    pub manifest_size: Option<usize>,
    pub queries: Vec<QueryBaseline>,
    pub skipped: Vec<SkippedQuery>,
    pub validations: BTreeMap<u32, Validation>,
    pub outcomes: Vec<FlipOutcome>,
}

impl CampaignResult {
    /// Distinct flip ids that were evaluated on some query.
    pub fn evaluated_flips(&self) -> BTreeSet<u32> {
        self.outcomes.iter().map(|o| o.flip_id).collect()
    }
}

struct Job<'a> {
    query: &'a QueryBaseline,
    flip_id: u32,
}

/// Everything a flip evaluation needs, shared across workers.
struct Env<'a> {
    target: &'a dyn Target,
    config: &'a CampaignConfig,
    rules: &'a [PlanRule],
    validations: &'a BTreeMap<u32, Validation>,
    scratch: &'a Path,
}

fn error_outcome(query: &QueryBaseline, flip_id: u32, flipped: Measurement, e: &TargetError) -> FlipOutcome {
    FlipOutcome {
        query_id: query.query_id.clone(),
        flip_id,
        baseline: query.baseline.clone(),
        flipped,
        cost_gated_out: false,
        verdict: Verdict::Error(e.kind().to_string()),
        ratio: None,
        validation: None,
        error: Some(e.to_string()),
    }
}

/// Explain output is required by the cost gate and plan rules. Without
/// either, a target that cannot explain still takes part.
fn explain_for(
    target: &dyn Target,
    selection: FlipSelection,
    sql: &str,
    required: bool,
) -> Result<Measurement, TargetError> {
    match target.explain(selection, sql) {
        Err(e) if !required => {
            log::debug!("explain unavailable, continuing without: {e}");
            Ok(Measurement::empty())
        }
        other => other,
    }
}

fn evaluate(env: &Env, job: &Job) -> FlipOutcome {
    let Job { query, flip_id } = *job;
    let selection = FlipSelection::of(flip_id);
    let suite = env.validations[&flip_id].clone();

    let required = env.config.cost_gate || !env.rules.is_empty();
    let explained = match explain_for(env.target, selection, &query.sql, required) {
        Ok(m) => m,
        Err(e) => return error_outcome(query, flip_id, Measurement::empty(), &e),
    };
    if env.config.cost_gate {
        let passes = matches!((explained.est_cost, query.baseline.est_cost), (Some(f), Some(b)) if f < b);
        if !passes {
            let verdict = if suite.passed() {
                Verdict::NoGain
            } else {
                Verdict::FunctionalityAltering
            };
            return FlipOutcome {
                query_id: query.query_id.clone(),
                flip_id,
                baseline: query.baseline.clone(),
                flipped: explained,
                cost_gated_out: true,
                verdict,
                ratio: None,
                validation: Some(suite),
                error: None,
            };
        }
    }

    let cov = env.scratch.join(format!("{}-{flip_id}.cov", query.query_id));
    let flipped = match measure_with_repeats(
        env.target,
        selection,
        &query.sql,
        env.config.repeats,
        env.config.metric,
        &cov,
    ) {
        Ok(m) => m.with_explain(&explained),
        Err(e) => return error_outcome(query, flip_id, explained, &e),
    };
    let metrics = metric_value(&query.baseline, env.config.metric)
        .and_then(|b| metric_value(&flipped, env.config.metric).map(|f| (b, f)));
    let (base_metric, flip_metric) = match metrics {
        Ok(m) => m,
        Err(e) => return error_outcome(query, flip_id, flipped, &e),
    };

    let mut validation = suite;
    if validation.passed() {
        if let (Some(b), Some(f)) = (&query.baseline.digest, &flipped.digest) {
            if let Some(reason) = digest_mismatch(b, f) {
                validation = Validation::fail(&query.query_id, reason);
            }
        }
    }
    if validation.passed() && !env.rules.is_empty() {
        let plan = flipped.plan_text.as_deref().unwrap_or_default();
        if let Some(v) = check_plan_invariants(plan, env.rules).first() {
            validation = Validation::fail(
                &query.query_id,
                format!("plan rule `{}` violated at line {}", v.rule, v.line),
            );
        }
    }
    let (verdict, ratio) = decide_verdict(base_metric, flip_metric, env.config.gap_threshold, &validation);
    FlipOutcome {
        query_id: query.query_id.clone(),
        flip_id,
        baseline: query.baseline.clone(),
        flipped,
        cost_gated_out: false,
        verdict,
        ratio: Some(ratio),
        validation: Some(validation),
        error: None,
    }
}

/// Runs `f` over `items` on up to `workers` threads; results keep input order.
fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Opens the configured target and runs the campaign against it.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignResult, CampaignError> {
    let manifest = match &config.manifest_path {
        Some(p) => Some(Manifest::load(p).map_err(|e| CampaignError::Config(e.to_string()))?),
        None => None,
    };
    let env = manifest.as_ref().map_or_else(|| config.flip_env(), |m| m.env.clone());
    let target = open_target(&config.target, &env).map_err(|e| CampaignError::Config(e.to_string()))?;
    run_campaign_on(config, target.as_ref(), manifest.as_ref())
}

/// The campaign loop over an already opened target.
pub fn run_campaign_on(
    config: &CampaignConfig,
    target: &dyn Target,
    manifest: Option<&Manifest>,
) -> Result<CampaignResult, CampaignError> {
    config.check()?;
    let queries = load_queries(&config.workload_dir)?;
    if queries.is_empty() {
        log::warn!("no queries under {}", config.workload_dir.join("queries").display());
    }
    let suite = match &config.validation_dir {
        Some(dir) => load_queries(dir)?,
        None => Vec::new(),
    };
    let rules = match &config.plan_rules {
        Some(p) => load_rules(p)?,
        None => Vec::new(),
    };
    let scratch = tempfile::Builder::new()
        .prefix("bfa-campaign-")
        .tempdir()
        .map_err(|e| CampaignError::Io(e.to_string()))?;
    let workers = config.effective_workers();

    // Baselines.
    let baselines = par_map(&queries, workers, |q| {
        let cov = scratch.path().join(format!("{}-base.cov", q.id));
        let explained = explain_for(
            target,
            FlipSelection::NONE,
            &q.sql,
            config.cost_gate || !rules.is_empty(),
        )?;
        let executed = measure_with_repeats(target, FlipSelection::NONE, &q.sql, config.repeats, config.metric, &cov)?;
        Ok::<_, TargetError>(executed.with_explain(&explained))
    });
    let mut measured = Vec::new();
    let mut skipped = Vec::new();
    for (q, result) in queries.iter().zip(baselines) {
        match result {
            Ok(baseline) => measured.push(QueryBaseline {
                query_id: q.id.clone(),
                sql: q.sql.clone(),
                baseline,
            }),
            Err(e) => {
                log::warn!("query {} skipped: baseline failed: {e}", q.id);
                skipped.push(SkippedQuery {
                    query_id: q.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }

    // Flips to try: the executed ids, restricted to the manifest when there is one.
    let known = |id: u32| manifest.is_none_or(|m| m.site(id).is_some());
    let jobs: Vec<Job> = measured
        .iter()
        .flat_map(|q| {
            q.baseline
                .coverage
                .ids()
                .iter()
                .filter(|&&id| known(id))
                .map(move |&flip_id| Job { query: q, flip_id })
        })
        .collect();

    let flip_ids: Vec<u32> = jobs
        .iter()
        .map(|j| j.flip_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let validator = Validator::new(target, suite, scratch.path());
    let validations: BTreeMap<u32, Validation> = flip_ids
        .iter()
        .copied()
        .zip(par_map(&flip_ids, workers, |&id| validator.validate(id)))
        .collect();

    let env = Env {
        target,
        config,
        rules: &rules,
        validations: &validations,
        scratch: scratch.path(),
    };
    let mut outcomes = par_map(&jobs, workers, |job| evaluate(&env, job));
    outcomes.sort_by(|a, b| (&a.query_id, a.flip_id).cmp(&(&b.query_id, b.flip_id)));

    Ok(CampaignResult {
        metric: config.metric,
        gap_threshold: config.gap_threshold,
        cost_gate: config.cost_gate,
        repeats: config.repeats,
        manifest_size: manifest.map(|m| m.len()).or_else(|| target.builtin_flip_points()),
        queries: measured,
        skipped,
        validations,
        outcomes,
    })
}
