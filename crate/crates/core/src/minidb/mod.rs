//! A deterministic miniature relational engine.
//!
//! Supports `SELECT .. FROM .. JOIN .. ON .. WHERE .. LIMIT ..` over int and
//! text columns. Its optimizer decisions are flip points (see
//! [`FLIP_POINTS`]); a few of them are deliberately miscalibrated so that
//! flipping them yields large, result-preserving speedups, and one of them
//! breaks results when flipped.

mod catalog;
mod datagen;
mod digest;
mod exec;
mod explain;
mod parser;
mod planner;
mod value;

use thiserror::Error;

use crate::flipcore::{CoverageRecord, FlipContext, FlipSelection, MemorySink};

pub use catalog::{load_database, parse_table, Column, Database, Stats, Table};
pub use datagen::{generate_dataset, write_dataset, ColumnSpec, DatasetSpec, Lcg, TableSpec};
pub use digest::{digest_lines, fnv1a64, result_digest, row_line, ResultDigest};
pub use exec::{execute_plan, ExecStats, HASH_BUCKETS};
pub use explain::render_plan;
pub use parser::{parse_query, ColumnRef, CompareOp, JoinClause, Predicate, Projection, QueryAst};
pub use planner::{
    estimate_cost, fp, plan, BoundPredicate, BuildSide, JoinKey, Operator, Plan, PlanNode, NESTED_LOOP_THRESHOLD,
};
pub use value::{ColumnType, Row, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DbError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("planning error: {0}")]
    Plan(String),
    #[error("load error: {0}")]
    Load(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl DbError {
    /// SQL errors (as opposed to data or I/O problems).
    pub fn is_sql(&self) -> bool {
        matches!(self, DbError::Syntax { .. } | DbError::Plan(_))
    }
}

/// Description of one built-in flip point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlipPointInfo {
    pub id: u32,
    pub name: &'static str,
    pub decision: &'static str,
}

pub const FLIP_POINTS: [FlipPointInfo; 6] = [
    FlipPointInfo {
        id: fp::JOIN_ALGORITHM,
        name: "join-algorithm",
        decision: "nested-loop join when the inner estimate is below 1000 rows",
    },
    FlipPointInfo {
        id: fp::SKIP_PUSHDOWN,
        name: "skip-pushdown",
        decision: "keep predicates above the joins when a join query has several predicates",
    },
    FlipPointInfo {
        id: fp::DRAIN_LIMIT,
        name: "drain-limit",
        decision: "LIMIT drains its input when the query has joins",
    },
    FlipPointInfo {
        id: fp::BUILD_LEFT,
        name: "build-left",
        decision: "hash join builds on the left input when it is not larger",
    },
    FlipPointInfo {
        id: fp::HASH_RECHECK,
        name: "hash-recheck",
        decision: "hash join re-checks key equality after a bucket match",
    },
    FlipPointInfo {
        id: fp::EQUALITY_FIRST,
        name: "equality-first",
        decision: "pushed-down predicates evaluate equality comparisons first",
    },
];

/// Everything observed while running one query.
#[derive(Debug, Clone)]
pub struct QueryRun {
    pub plan: Plan,
    pub rows: Vec<Row>,
    pub stats: ExecStats,
    pub digest: ResultDigest,
    pub coverage: CoverageRecord,
}

/// Parses, plans, and executes `sql` with the given flip.
pub fn run_query(db: &Database, sql: &str, selection: FlipSelection) -> Result<QueryRun, DbError> {
    let sink = MemorySink::new();
    let run = run_query_with(db, sql, &FlipContext::new(selection, &sink))?;
    Ok(QueryRun {
        coverage: sink.snapshot(),
        ..run
    })
}

/// Like [`run_query`] but reporting flip points to a caller-owned sink.
/// The returned coverage is empty; read it from the sink.
pub fn run_query_with(db: &Database, sql: &str, flips: &FlipContext) -> Result<QueryRun, DbError> {
    let ast = parse_query(sql)?;
    let plan = plan(&ast, db, flips)?;
    let (rows, stats) = execute_plan(&plan, db, flips);
    let digest = result_digest(&rows);
    Ok(QueryRun {
        plan,
        rows,
        stats,
        digest,
        coverage: CoverageRecord::new(),
    })
}

/// Explain text for a parsed query.
pub fn explain(ast: &QueryAst, db: &Database, flips: &FlipContext) -> Result<String, DbError> {
    Ok(render_plan(&plan(ast, db, flips)?))
}

/// Plans `sql` and returns the plan with the planner's coverage.
pub fn explain_query(db: &Database, sql: &str, selection: FlipSelection) -> Result<(Plan, CoverageRecord), DbError> {
    let sink = MemorySink::new();
    let ast = parse_query(sql)?;
    let plan = plan(&ast, db, &FlipContext::new(selection, &sink))?;
    Ok((plan, sink.snapshot()))
}
