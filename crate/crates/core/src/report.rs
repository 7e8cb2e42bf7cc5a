//! Issue grouping, coverage statistics, and the text/JSON reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::campaign::{metric_value, ratio_serde, CampaignResult, FlipOutcome, Metric, Validation, Verdict};
use crate::flipcore::CoverageRecord;
use crate::instrument::{BranchSite, Manifest};

pub const OUTCOMES_FILE: &str = "outcomes.json";
pub const ISSUES_FILE: &str = "issues.json";
pub const REPORT_FILE: &str = "report.txt";
pub const COVERAGE_FILE: &str = "coverage.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub flip_id: u32,
    pub site: Option<BranchSite>,
    pub exemplar_query: String,
    pub exemplar_sql: String,
    #[serde(with = "ratio_serde")]
    pub ratio: Option<f64>,
    pub baseline_metric: f64,
    pub flipped_metric: f64,
    pub baseline_plan: String,
    pub flipped_plan: String,
    /// Other queries on which the same flip is also an issue.
    pub affected_count: usize,
    pub affected_queries: Vec<String>,
}

impl Issue {
    fn ratio_value(&self) -> f64 {
        self.ratio.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueFile {
    pub issue_count: usize,
    pub metric: Metric,
    pub gap_threshold: f64,
    pub issues: Vec<Issue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub baseline_ids: BTreeSet<u32>,
    pub union_flip_ids: BTreeSet<u32>,
    pub manifest_size: Option<usize>,
    pub increase_pct: f64,
}

impl CoverageStats {
    pub fn new_ids(&self) -> Vec<u32> {
        self.union_flip_ids.difference(&self.baseline_ids).copied().collect()
    }
}

fn sql_of<'a>(result: &'a CampaignResult, query_id: &str) -> &'a str {
    result
        .queries
        .iter()
        .find(|q| q.query_id == query_id)
        .map_or("", |q| q.sql.as_str())
}

/// Groups issue outcomes by flip id. The exemplar is the highest ratio,
/// ties going to the smaller query id. Sorted by ratio descending, then flip id.
pub fn build_issues(result: &CampaignResult, manifest: Option<&Manifest>) -> Vec<Issue> {
    let hits: Vec<&FlipOutcome> = result.outcomes.iter().filter(|o| o.verdict == Verdict::Issue).collect();
    let flips: BTreeSet<u32> = hits.iter().map(|o| o.flip_id).collect();
    let mut issues: Vec<Issue> = flips
        .into_iter()
        .map(|flip_id| {
            let mut group: Vec<&&FlipOutcome> = hits.iter().filter(|o| o.flip_id == flip_id).collect();
            group.sort_by(|a, b| {
                let (ra, rb) = (a.ratio.unwrap_or(0.0), b.ratio.unwrap_or(0.0));
                rb.total_cmp(&ra).then_with(|| a.query_id.cmp(&b.query_id))
            });
            let best = group[0];
            let metric = |m| metric_value(m, result.metric).unwrap_or(f64::NAN);
            Issue {
                flip_id,
                site: manifest.and_then(|m| m.site(flip_id)).cloned(),
                exemplar_query: best.query_id.clone(),
                exemplar_sql: sql_of(result, &best.query_id).to_string(),
                ratio: best.ratio,
                baseline_metric: metric(&best.baseline),
                flipped_metric: metric(&best.flipped),
                baseline_plan: best.baseline.plan_text.clone().unwrap_or_default(),
                flipped_plan: best.flipped.plan_text.clone().unwrap_or_default(),
                affected_count: group.len() - 1,
                affected_queries: group[1..].iter().map(|o| o.query_id.clone()).collect(),
            }
        })
        .collect();
    issues.sort_by(|a, b| {
        b.ratio_value()
            .total_cmp(&a.ratio_value())
            .then(a.flip_id.cmp(&b.flip_id))
    });
    issues
}

/// Union of baseline coverage against the union including every flipped run.
pub fn coverage_stats<'a>(
    baseline: impl IntoIterator<Item = &'a CoverageRecord>,
    flipped: impl IntoIterator<Item = &'a CoverageRecord>,
    manifest_size: Option<usize>,
) -> CoverageStats {
    let baseline_ids: BTreeSet<u32> = baseline.into_iter().flat_map(|c| c.ids().iter().copied()).collect();
    let mut union_flip_ids = baseline_ids.clone();
    union_flip_ids.extend(flipped.into_iter().flat_map(|c| c.ids().iter().copied()));
    let increase_pct = 100.0 * (union_flip_ids.len() - baseline_ids.len()) as f64 / baseline_ids.len().max(1) as f64;
    CoverageStats {
        baseline_ids,
        union_flip_ids,
        manifest_size,
        increase_pct,
    }
}

pub fn campaign_coverage(result: &CampaignResult) -> CoverageStats {
    coverage_stats(
        result.queries.iter().map(|q| &q.baseline.coverage),
        result.outcomes.iter().map(|o| &o.flipped.coverage),
        result.manifest_size,
    )
}

/// Ratio as shown in text: one decimal and an `x`.
pub fn format_ratio(ratio: Option<f64>) -> String {
    match ratio {
        None => "-".to_string(),
        Some(r) if r.is_infinite() => "infx".to_string(),
        Some(r) => format!("{r:.1}x"),
    }
}

fn format_metric(metric: Metric, value: f64) -> String {
    match metric {
        Metric::WorkUnits => format!("{value:.0}"),
        Metric::WallMs => format!("{value:.3}"),
    }
}

fn join_ids<'a>(ids: impl IntoIterator<Item = &'a u32>) -> String {
    let v: Vec<String> = ids.into_iter().map(|i| i.to_string()).collect();
    if v.is_empty() {
        "(none)".to_string()
    } else {
        v.join(", ")
    }
}

fn site_label(flip_id: u32, site: Option<&BranchSite>) -> String {
    match site {
        Some(s) => format!(
            "flip-point {flip_id} at {}:{}:{} `{}`",
            s.file, s.line, s.column, s.condition_text
        ),
        None => format!("flip-point {flip_id} (built-in)"),
    }
}

fn indent_block(out: &mut String, text: &str, pad: &str) {
    for line in text.lines() {
        let _ = writeln!(out, "{pad}{line}");
    }
}

/// Human-readable report. Deterministic for identical inputs, and free of
/// wall-clock values unless wall_ms is the metric.
pub fn render_report(result: &CampaignResult, issues: &[Issue], stats: &CoverageStats) -> String {
    let mut out = String::new();
    let count = |pred: &dyn Fn(&FlipOutcome) -> bool| result.outcomes.iter().filter(|o| pred(o)).count();
    let _ = writeln!(out, "Branch-flip campaign report");
    let _ = writeln!(
        out,
        "metric: {}  gap threshold: {}  cost gate: {}  repeats: {}",
        result.metric.name(),
        result.gap_threshold,
        if result.cost_gate { "on" } else { "off" },
        result.repeats
    );
    let _ = writeln!(
        out,
        "queries: {} measured, {} skipped",
        result.queries.len(),
        result.skipped.len()
    );
    let _ = writeln!(
        out,
        "flip evaluations: {} (issue {}, no_gain {}, functionality_altering {}, error {}; cost-gated {})",
        result.outcomes.len(),
        count(&|o| o.verdict == Verdict::Issue),
        count(&|o| o.verdict == Verdict::NoGain),
        count(&|o| o.verdict == Verdict::FunctionalityAltering),
        count(&|o| matches!(o.verdict, Verdict::Error(_))),
        count(&|o| o.cost_gated_out),
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "{} issues found", issues.len());
    for (n, issue) in issues.iter().enumerate() {
        let _ = writeln!(out);
        let _ = writeln!(out, "[{}] {}", n + 1, site_label(issue.flip_id, issue.site.as_ref()));
        let _ = writeln!(out, "    exemplar: {}", issue.exemplar_query);
        let _ = writeln!(out, "    query: {}", issue.exemplar_sql);
        let _ = writeln!(out, "    ratio: {}", format_ratio(issue.ratio));
        let _ = writeln!(
            out,
            "    {}: baseline {} -> flipped {}",
            result.metric.name(),
            format_metric(result.metric, issue.baseline_metric),
            format_metric(result.metric, issue.flipped_metric)
        );
        let _ = writeln!(
            out,
            "    affected queries: {}{}",
            issue.affected_count,
            if issue.affected_queries.is_empty() {
                String::new()
            } else {
                format!(" ({})", issue.affected_queries.join(", "))
            }
        );
        let _ = writeln!(out, "    baseline plan:");
        indent_block(&mut out, &issue.baseline_plan, "      ");
        let _ = writeln!(out, "    flipped plan:");
        indent_block(&mut out, &issue.flipped_plan, "      ");
    }

    let failing: Vec<(&u32, &Validation)> = result.validations.iter().filter(|(_, v)| !v.passed()).collect();
    if !failing.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "Functionality-altering flips");
        for (id, v) in failing {
            if let Validation::Fail { query, reason } = v {
                let _ = writeln!(out, "  flip {id}: failed on {query} ({reason})");
            }
        }
    }
    if !result.skipped.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "Skipped queries");
        for s in &result.skipped {
            let _ = writeln!(out, "  {}: {}", s.query_id, s.error);
        }
    }

    let _ = writeln!(out);
    let _ = writeln!(out, "Coverage");
    let _ = writeln!(out, "  baseline ids: {}", join_ids(&stats.baseline_ids));
    let _ = writeln!(out, "  with flips: {}", join_ids(&stats.union_flip_ids));
    let _ = writeln!(out, "  new ids: {}", join_ids(&stats.new_ids()));
    if let Some(n) = stats.manifest_size {
        let _ = writeln!(out, "  flippable sites: {n}");
    }
    let _ = writeln!(out, "  increase: {:.1}%", stats.increase_pct);
    out
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// Writes outcomes.json, issues.json, report.txt, and coverage.json.
pub fn write_outputs(dir: &Path, result: &CampaignResult, manifest: Option<&Manifest>) -> std::io::Result<Vec<Issue>> {
    fs::create_dir_all(dir)?;
    let issues = build_issues(result, manifest);
    let stats = campaign_coverage(result);
    let issue_file = IssueFile {
        issue_count: issues.len(),
        metric: result.metric,
        gap_threshold: result.gap_threshold,
        issues: issues.clone(),
    };
    fs::write(dir.join(OUTCOMES_FILE), to_json(result))?;
    fs::write(dir.join(ISSUES_FILE), to_json(&issue_file))?;
    fs::write(dir.join(COVERAGE_FILE), to_json(&stats))?;
    fs::write(dir.join(REPORT_FILE), render_report(result, &issues, &stats))?;
    Ok(issues)
}
