//! Heuristic planner and cost model.
//!
//! Every optimizer decision that the engine makes goes through a flip point,
//! so each one can be inverted for a single run.

use super::catalog::{Database, Stats};
use super::parser::{ColumnRef, CompareOp, Predicate, Projection, QueryAst};
use super::value::{ColumnType, Value};
use super::DbError;
use crate::flipcore::FlipContext;

/// Flip point ids used by the engine.
pub mod fp {
    pub const JOIN_ALGORITHM: u32 = 1;
    pub const SKIP_PUSHDOWN: u32 = 2;
    pub const DRAIN_LIMIT: u32 = 3;
    pub const BUILD_LEFT: u32 = 4;
    pub const HASH_RECHECK: u32 = 5;
    pub const EQUALITY_FIRST: u32 = 6;
}

/// Inner inputs estimated below this many rows get a nested-loop join.
pub const NESTED_LOOP_THRESHOLD: u64 = 1000;
/// Row estimate multiplier per predicate, as a divisor (selectivity 0.1).
const SELECTIVITY_DIVISOR: u64 = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundPredicate {
    /// Position of the column in the input row.
    pub position: usize,
    pub label: String,
    pub op: CompareOp,
    pub constant: Value,
}

impl BoundPredicate {
    pub fn render(&self) -> String {
        let constant = match &self.constant {
            Value::Int(v) => v.to_string(),
            Value::Text(s) => format!("'{s}'"),
        };
        format!("{} {} {}", self.label, self.op.symbol(), constant)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinKey {
    /// Position in the left input row.
    pub left: usize,
    /// Position in the right input row.
    pub right: usize,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildSide {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operator {
    SeqScan {
        table: String,
    },
    Filter {
        input: Box<PlanNode>,
        predicates: Vec<BoundPredicate>,
    },
    NestedLoopJoin {
        outer: Box<PlanNode>,
        inner: Box<PlanNode>,
        key: JoinKey,
    },
    HashJoin {
        left: Box<PlanNode>,
        right: Box<PlanNode>,
        key: JoinKey,
        build: BuildSide,
    },
    Project {
        input: Box<PlanNode>,
        columns: Vec<usize>,
        labels: Vec<String>,
        star: bool,
    },
    Limit {
        input: Box<PlanNode>,
        count: u64,
        early_stop: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanNode {
    pub op: Operator,
    pub est_rows: u64,
    pub est_cost: u64,
}

impl PlanNode {
    pub fn kind(&self) -> &'static str {
        match &self.op {
            Operator::SeqScan { .. } => "SeqScan",
            Operator::Filter { .. } => "Filter",
            Operator::NestedLoopJoin { .. } => "NestedLoopJoin",
            Operator::HashJoin { .. } => "HashJoin",
            Operator::Project { .. } => "Project",
            Operator::Limit { .. } => "Limit",
        }
    }

    pub fn children(&self) -> Vec<&PlanNode> {
        match &self.op {
            Operator::SeqScan { .. } => vec![],
            Operator::Filter { input, .. } | Operator::Project { input, .. } | Operator::Limit { input, .. } => {
                vec![input]
            }
            Operator::NestedLoopJoin { outer, inner, .. } => vec![outer, inner],
            Operator::HashJoin { left, right, .. } => vec![left, right],
        }
    }

    /// Builds a node and annotates it from its (already annotated) children.
    pub fn new(op: Operator, stats: &Stats) -> PlanNode {
        let (est_rows, est_cost) = estimate_cost(&op, stats);
        PlanNode { op, est_rows, est_cost }
    }
}

/// Estimated (rows, cost) of `op`, whose children are already annotated.
pub fn estimate_cost(op: &Operator, stats: &Stats) -> (u64, u64) {
    match op {
        Operator::SeqScan { table } => {
            let n = stats.get(table).copied().unwrap_or(0);
            (n, n)
        }
        Operator::Filter { input, predicates } => {
            let rows = predicates
                .iter()
                .fold(input.est_rows, |rows, _| rows.div_ceil(SELECTIVITY_DIVISOR));
            (rows, input.est_cost.saturating_add(input.est_rows))
        }
        Operator::NestedLoopJoin { outer, inner, .. } => {
            let rows = outer.est_rows.min(inner.est_rows);
            let cost = outer
                .est_cost
                .saturating_add(inner.est_cost)
                .saturating_add(outer.est_rows.saturating_mul(inner.est_rows));
            (rows, cost)
        }
        Operator::HashJoin { left, right, .. } => {
            let rows = left.est_rows.min(right.est_rows);
            // build + probe rows is the same whichever side is built.
            let cost = left
                .est_cost
                .saturating_add(right.est_cost)
                .saturating_add(left.est_rows)
                .saturating_add(right.est_rows)
                .saturating_add(rows);
            (rows, cost)
        }
        Operator::Project { input, .. } => (input.est_rows, input.est_cost),
        Operator::Limit {
            input,
            count,
            early_stop,
        } => {
            let rows = (*count).min(input.est_rows);
            let cost = if *early_stop {
                input.est_cost
            } else {
                // Draining pulls and discards every remaining input row.
                input.est_cost.saturating_add(input.est_rows)
            };
            (rows, cost)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub root: PlanNode,
    /// Labels of the output columns.
    pub output: Vec<String>,
}

impl Plan {
    pub fn total_cost(&self) -> u64 {
        self.root.est_cost
    }
}

/// A column resolved against the FROM list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Resolved {
    slot: usize,
    column: usize,
}

struct Scope<'a> {
    tables: Vec<&'a super::catalog::Table>,
}

impl<'a> Scope<'a> {
    fn resolve(&self, col: &ColumnRef) -> Result<Resolved, DbError> {
        match &col.table {
            Some(t) => {
                let slot = self
                    .tables
                    .iter()
                    .position(|tab| &tab.name == t)
                    .ok_or_else(|| DbError::Plan(format!("table {t} is not in the FROM list")))?;
                let column = self.tables[slot]
                    .column_index(&col.column)
                    .ok_or_else(|| DbError::Plan(format!("unknown column {col}")))?;
                Ok(Resolved { slot, column })
            }
            None => {
                let mut found = self
                    .tables
                    .iter()
                    .enumerate()
                    .filter_map(|(slot, t)| t.column_index(&col.column).map(|column| Resolved { slot, column }));
                let first = found
                    .next()
                    .ok_or_else(|| DbError::Plan(format!("unknown column {col}")))?;
                if found.next().is_some() {
                    return Err(DbError::Plan(format!("ambiguous column {col}")));
                }
                Ok(first)
            }
        }
    }

    fn ty(&self, r: Resolved) -> ColumnType {
        self.tables[r.slot].columns[r.column].ty
    }

    fn label(&self, r: Resolved) -> String {
        format!(
            "{}.{}",
            self.tables[r.slot].name, self.tables[r.slot].columns[r.column].name
        )
    }

    fn width(&self, slot: usize) -> usize {
        self.tables[slot].columns.len()
    }
}

/// A subtree plus the FROM slots whose columns it produces, in order.
struct Partial {
    node: PlanNode,
    slots: Vec<usize>,
}

impl Partial {
    fn position(&self, scope: &Scope, r: Resolved) -> Option<usize> {
        let mut offset = 0;
        for &slot in &self.slots {
            if slot == r.slot {
                return Some(offset + r.column);
            }
            offset += scope.width(slot);
        }
        None
    }
}

/// Plans `ast` against `db`, routing each decision through `flips`.
pub fn plan(ast: &QueryAst, db: &Database, flips: &FlipContext) -> Result<Plan, DbError> {
    let stats = db.stats();
    let mut names = vec![ast.base.as_str()];
    names.extend(ast.joins.iter().map(|j| j.table.as_str()));
    let mut tables = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        if names[..i].contains(name) {
            return Err(DbError::Plan(format!("table {name} appears more than once")));
        }
        tables.push(
            db.table(name)
                .ok_or_else(|| DbError::Plan(format!("unknown table {name}")))?,
        );
    }
    let scope = Scope { tables };

    // Resolve joins: (column on the already-joined side, column on the new table).
    let mut join_keys = Vec::with_capacity(ast.joins.len());
    for (i, join) in ast.joins.iter().enumerate() {
        let new_slot = i + 1;
        let a = scope.resolve(&join.left)?;
        let b = scope.resolve(&join.right)?;
        let (acc, new) = if b.slot == new_slot && a.slot < new_slot {
            (a, b)
        } else if a.slot == new_slot && b.slot < new_slot {
            (b, a)
        } else {
            return Err(DbError::Plan(format!(
                "join condition {} = {} must compare {} with an earlier table",
                join.left, join.right, join.table
            )));
        };
        if scope.ty(acc) != scope.ty(new) {
            return Err(DbError::Plan(format!(
                "join condition {} = {} compares {} with {}",
                join.left,
                join.right,
                scope.ty(acc),
                scope.ty(new)
            )));
        }
        join_keys.push((acc, new));
    }

    let mut preds = Vec::with_capacity(ast.predicates.len());
    for p in &ast.predicates {
        let r = scope.resolve(&p.column)?;
        check_constant(&scope, r, p)?;
        preds.push((r, p));
    }

    let has_join = !ast.joins.is_empty();
    let skip_pushdown = !preds.is_empty() && flips.point(fp::SKIP_PUSHDOWN, has_join && preds.len() > 1);

    let input_for = |slot: usize| -> Partial {
        let scan = PlanNode::new(
            Operator::SeqScan {
                table: scope.tables[slot].name.clone(),
            },
            &stats,
        );
        let mut partial = Partial {
            node: scan,
            slots: vec![slot],
        };
        if skip_pushdown {
            return partial;
        }
        let mut mine: Vec<_> = preds.iter().filter(|(r, _)| r.slot == slot).collect();
        if mine.is_empty() {
            return partial;
        }
        if has_join && flips.point(fp::EQUALITY_FIRST, mine.len() > 1) {
            mine.sort_by_key(|(_, p)| p.op != CompareOp::Eq);
        }
        let bound = mine.iter().map(|(r, p)| bind(&scope, &partial, *r, p)).collect();
        partial.node = PlanNode::new(
            Operator::Filter {
                input: Box::new(partial.node),
                predicates: bound,
            },
            &stats,
        );
        partial
    };

    let mut acc = input_for(0);
    for (i, (acc_col, new_col)) in join_keys.iter().enumerate() {
        let inner = input_for(i + 1);
        let key = JoinKey {
            left: acc
                .position(&scope, *acc_col)
                .expect("left join column is on the accumulated side"),
            right: inner
                .position(&scope, *new_col)
                .expect("right join column is on the new table"),
            label: format!("{} = {}", scope.label(*acc_col), scope.label(*new_col)),
        };
        let op = if flips.point(fp::JOIN_ALGORITHM, inner.node.est_rows < NESTED_LOOP_THRESHOLD) {
            Operator::NestedLoopJoin {
                outer: Box::new(acc.node),
                inner: Box::new(inner.node),
                key,
            }
        } else {
            let build_left = flips.point(fp::BUILD_LEFT, acc.node.est_rows <= inner.node.est_rows);
            Operator::HashJoin {
                left: Box::new(acc.node),
                right: Box::new(inner.node),
                key,
                build: if build_left { BuildSide::Left } else { BuildSide::Right },
            }
        };
        let mut slots = acc.slots;
        slots.extend(inner.slots);
        acc = Partial {
            node: PlanNode::new(op, &stats),
            slots,
        };
    }

    if skip_pushdown {
        let bound = preds.iter().map(|(r, p)| bind(&scope, &acc, *r, p)).collect();
        acc.node = PlanNode::new(
            Operator::Filter {
                input: Box::new(acc.node),
                predicates: bound,
            },
            &stats,
        );
    }

    let (columns, labels, star) = match &ast.projection {
        Projection::Star => {
            let mut columns = Vec::new();
            let mut labels = Vec::new();
            for &slot in &acc.slots {
                for column in 0..scope.width(slot) {
                    let r = Resolved { slot, column };
                    columns.push(acc.position(&scope, r).expect("slot is in tree"));
                    labels.push(scope.label(r));
                }
            }
            (columns, labels, true)
        }
        Projection::Columns(cols) => {
            let mut columns = Vec::new();
            let mut labels = Vec::new();
            for c in cols {
                let r = scope.resolve(c)?;
                columns.push(acc.position(&scope, r).expect("every FROM slot is in tree"));
                labels.push(scope.label(r));
            }
            (columns, labels, false)
        }
    };
    let output = labels.clone();
    let mut root = PlanNode::new(
        Operator::Project {
            input: Box::new(acc.node),
            columns,
            labels,
            star,
        },
        &stats,
    );

    if let Some(count) = ast.limit {
        let drain = flips.point(fp::DRAIN_LIMIT, has_join);
        root = PlanNode::new(
            Operator::Limit {
                input: Box::new(root),
                count,
                early_stop: !drain,
            },
            &stats,
        );
    }
    Ok(Plan { root, output })
}

fn check_constant(scope: &Scope, r: Resolved, p: &Predicate) -> Result<(), DbError> {
    if scope.ty(r) != p.constant.column_type() {
        return Err(DbError::Plan(format!(
            "predicate on {} compares {} column with {} constant",
            p.column,
            scope.ty(r),
            p.constant.column_type()
        )));
    }
    Ok(())
}

fn bind(scope: &Scope, partial: &Partial, r: Resolved, p: &Predicate) -> BoundPredicate {
    BoundPredicate {
        position: partial
            .position(scope, r)
            .expect("predicate column is below its filter"),
        label: scope.label(r),
        op: p.op,
        constant: p.constant.clone(),
    }
}
