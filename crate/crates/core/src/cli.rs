//! The `bfa` command line.
//!
//! Exit codes: 0 success or nothing found, 1 issues found / validation
//! failed / plans differ, 2 usage or configuration error, 3 target or
//! runtime error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};

use crate::adapter::{open_target, Target};
use crate::campaign::{self, CampaignConfig, CampaignError, Metric, Validation};
use crate::flipcore::{FlipEnv, FlipSelection};
use crate::instrument::{self, InstrumentError, Manifest};
use crate::minidb::{self, DatasetSpec};
use crate::report;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FOUND: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "bfa",
    version,
    about = "Branch-flip analysis toolkit",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Wrap every `if` condition under ROOT in a flip guard.
    Instrument(InstrumentArgs),
    /// Run a flip campaign and write outcomes, issues, coverage, and a report.
    Campaign(CampaignArgs),
    /// Check that flipping the given ids leaves the validation suite's results unchanged.
    Validate(ValidateArgs),
    /// Generate a CSV dataset from a dataset spec.
    Gen(GenArgs),
    /// Show the baseline and flipped plans of one query and their diff.
    ExplainDiff(ExplainDiffArgs),
}

#[derive(Args, Debug)]
pub struct InstrumentArgs {
    #[arg(long)]
    pub root: PathBuf,
    /// Glob relative to ROOT; repeatable.
    #[arg(long = "include", required = true)]
    pub include: Vec<String>,
    #[arg(long, default_value = crate::flipcore::DEFAULT_FLIP_VAR)]
    pub flip_var: String,
    #[arg(long, default_value = crate::flipcore::DEFAULT_COVERAGE_VAR)]
    pub cov_var: String,
}

#[derive(Args, Debug)]
pub struct CampaignArgs {
    /// Campaign config (TOML); relative paths resolve against its directory.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for outcomes.json, issues.json, coverage.json and report.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Execute every covered flip regardless of its estimated cost.
    #[arg(long)]
    pub no_cost_gate: bool,
    /// Executions per measurement (overrides the config).
    #[arg(long)]
    pub repeats: Option<u32>,
    /// Parallel evaluations; work_units metric only.
    #[arg(long)]
    pub workers: Option<usize>,
    /// work_units or wall_ms.
    #[arg(long, value_parser = parse_metric)]
    pub metric: Option<Metric>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Flip id to validate; repeatable.
    #[arg(long = "flip", required = true)]
    pub flips: Vec<u32>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Dataset spec (TOML).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the spec.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("sql").required(true).args(["query", "query_file"])))]
pub struct ExplainDiffArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long)]
    pub query_file: Option<PathBuf>,
    #[arg(long)]
    pub flip: u32,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    match s {
        "work_units" => Ok(Metric::WorkUnits),
        "wall_ms" => Ok(Metric::WallMs),
        _ => Err(format!("unknown metric {s:?} (work_units or wall_ms)")),
    }
}

/// An exit code plus the message printed on stderr.
struct Failure(i32, String);

impl From<CampaignError> for Failure {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::Config(_) => Failure(EXIT_USAGE, e.to_string()),
            CampaignError::Io(_) => Failure(EXIT_RUNTIME, e.to_string()),
        }
    }
}

impl From<InstrumentError> for Failure {
    fn from(e: InstrumentError) -> Self {
        let code = match e {
            InstrumentError::Io { .. } | InstrumentError::Manifest { .. } => EXIT_RUNTIME,
            _ => EXIT_USAGE,
        };
        Failure(code, e.to_string())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Instrument(a) => cmd_instrument(&a),
        Command::Campaign(a) => cmd_campaign(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Gen(a) => cmd_gen(&a),
        Command::ExplainDiff(a) => cmd_explain_diff(&a),
    };
    match result {
        Ok(code) => code,
        Err(Failure(code, message)) => {
            eprintln!("bfa: {message}");
            code
        }
    }
}

fn cmd_instrument(a: &InstrumentArgs) -> Result<i32, Failure> {
    let env = FlipEnv::new(&a.flip_var, &a.cov_var).map_err(|e| Failure(EXIT_USAGE, e.to_string()))?;
    let manifest = instrument::instrument_tree(&a.root, &a.include, &env)?;
    let files: std::collections::BTreeSet<&str> = manifest.sites.iter().map(|s| s.file.as_str()).collect();
    eprintln!(
        "instrumented {} sites in {} files; shim {}",
        manifest.len(),
        files.len(),
        manifest.shim_file
    );
    println!("{}", a.root.join(instrument::MANIFEST_FILE).display());
    Ok(EXIT_OK)
}

fn load_config(path: &Path) -> Result<CampaignConfig, Failure> {
    Ok(CampaignConfig::load(path)?)
}

fn load_manifest(config: &CampaignConfig) -> Result<Option<Manifest>, Failure> {
    config
        .manifest_path
        .as_deref()
        .map(Manifest::load)
        .transpose()
        .map_err(|e| Failure(EXIT_USAGE, e.to_string()))
}

fn open(config: &CampaignConfig, manifest: Option<&Manifest>) -> Result<Box<dyn Target>, Failure> {
    let env = manifest.map_or_else(|| config.flip_env(), |m| m.env.clone());
    open_target(&config.target, &env).map_err(|e| Failure(EXIT_USAGE, e.to_string()))
}

fn cmd_campaign(a: &CampaignArgs) -> Result<i32, Failure> {
    let mut config = load_config(&a.config)?;
    if a.no_cost_gate {
        config.cost_gate = false;
    }
    if let Some(r) = a.repeats {
        config.repeats = r;
    }
    if let Some(w) = a.workers {
        config.workers = w;
    }
    if let Some(m) = a.metric {
        config.metric = m;
    }
    config.check()?;
    let manifest = load_manifest(&config)?;
    let target = open(&config, manifest.as_ref())?;
    let result = campaign::run_campaign_on(&config, target.as_ref(), manifest.as_ref())?;
    if !result.skipped.is_empty() && result.queries.is_empty() {
        return Err(Failure(
            EXIT_RUNTIME,
            format!(
                "every query failed its baseline run (first: {})",
                result.skipped[0].error
            ),
        ));
    }
    let issues = report::write_outputs(&a.out, &result, manifest.as_ref())
        .map_err(|e| Failure(EXIT_RUNTIME, format!("{}: {e}", a.out.display())))?;
    eprintln!(
        "{} issues found; {} flip evaluations over {} queries; report at {}",
        issues.len(),
        result.outcomes.len(),
        result.queries.len(),
        a.out.join(report::REPORT_FILE).display()
    );
    Ok(if issues.is_empty() { EXIT_OK } else { EXIT_FOUND })
}

fn cmd_validate(a: &ValidateArgs) -> Result<i32, Failure> {
    let config = load_config(&a.config)?;
    let dir = config
        .validation_dir
        .clone()
        .ok_or_else(|| Failure(EXIT_USAGE, "config has no validation_dir".into()))?;
    let manifest = load_manifest(&config)?;
    let target = open(&config, manifest.as_ref())?;
    let queries = campaign::load_queries(&dir)?;
    let scratch = tempfile::tempdir().map_err(|e| Failure(EXIT_RUNTIME, e.to_string()))?;
    let validator = campaign::Validator::new(target.as_ref(), queries, scratch.path());
    let mut code = EXIT_OK;
    for &flip in &a.flips {
        match validator.validate(flip) {
            Validation::Pass => println!("flip {flip}: pass"),
            Validation::Fail { query, reason } => {
                println!("flip {flip}: fail on {query} ({reason})");
                code = EXIT_FOUND;
            }
        }
    }
    Ok(code)
}

fn cmd_gen(a: &GenArgs) -> Result<i32, Failure> {
    let spec = DatasetSpec::load(&a.spec).map_err(|e| Failure(EXIT_USAGE, e.to_string()))?;
    let seed = a.seed.unwrap_or(spec.seed);
    let tables = minidb::write_dataset(&a.out, seed, &spec).map_err(|e| Failure(EXIT_RUNTIME, e.to_string()))?;
    for t in tables {
        println!("{}", a.out.join(format!("{t}.csv")).display());
    }
    Ok(EXIT_OK)
}

fn cmd_explain_diff(a: &ExplainDiffArgs) -> Result<i32, Failure> {
    let config = load_config(&a.config)?;
    let sql = match (&a.query, &a.query_file) {
        (Some(q), _) => q.clone(),
        (None, Some(p)) => fs::read_to_string(p).map_err(|e| Failure(EXIT_USAGE, format!("{}: {e}", p.display())))?,
        (None, None) => unreachable!("clap requires one"),
    };
    let manifest = load_manifest(&config)?;
    let target = open(&config, manifest.as_ref())?;
    let explain = |sel| {
        target
            .explain(sel, sql.trim())
            .map_err(|e| Failure(EXIT_RUNTIME, e.to_string()))
            .map(|m| m.plan_text.unwrap_or_default())
    };
    let base = explain(FlipSelection::NONE)?;
    let flipped = explain(FlipSelection::of(a.flip))?;
    println!("--- baseline");
    print!("{base}");
    println!("--- flip {}", a.flip);
    print!("{flipped}");
    if base == flipped {
        println!("--- plans are identical");
        return Ok(EXIT_OK);
    }
    println!("--- diff");
    let diff = similar::TextDiff::from_lines(&base, &flipped);
    print!(
        "{}",
        diff.unified_diff()
            .context_radius(3)
            .header("baseline", &format!("flip {}", a.flip))
    );
    Ok(EXIT_FOUND)
}
