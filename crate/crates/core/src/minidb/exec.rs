//! Pull-based executor with deterministic work accounting.
//!
//! Work units: +1 per base row scanned, +1 per predicate evaluation, +1 per
//! hash insert, +1 per hash bucket entry compared, +1 per nested-loop inner
//! comparison, +1 per row returned from the root.

use std::cell::Cell;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::catalog::Database;
use super::planner::{fp, BoundPredicate, BuildSide, JoinKey, Operator, Plan, PlanNode};
use super::value::Row;
use crate::flipcore::FlipContext;

pub const HASH_BUCKETS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecStats {
    pub work_units: u64,
    pub rows_out: u64,
    pub wall_ms: f64,
}

struct Ctx<'f> {
    work: Cell<u64>,
    flips: &'f FlipContext<'f>,
}

impl Ctx<'_> {
    #[inline]
    fn charge(&self, n: u64) {
        self.work.set(self.work.get() + n);
    }
}

trait Node {
    fn next(&mut self, ctx: &Ctx) -> Option<Row>;
}

struct Scan<'a> {
    rows: &'a [Row],
    pos: usize,
}

impl Node for Scan<'_> {
    fn next(&mut self, ctx: &Ctx) -> Option<Row> {
        let row = self.rows.get(self.pos)?;
        self.pos += 1;
        ctx.charge(1);
        Some(row.clone())
    }
}

struct Filter<'a> {
    input: Box<dyn Node + 'a>,
    predicates: &'a [BoundPredicate],
}

impl Node for Filter<'_> {
    fn next(&mut self, ctx: &Ctx) -> Option<Row> {
        'rows: loop {
            let row = self.input.next(ctx)?;
            for p in self.predicates {
                ctx.charge(1);
                let keep = row[p.position].compare(&p.constant).is_some_and(|ord| p.op.holds(ord));
                if !keep {
                    continue 'rows;
                }
            }
            return Some(row);
        }
    }
}

fn concat(left: &Row, right: &Row) -> Row {
    let mut out = Vec::with_capacity(left.len() + right.len());
    out.extend_from_slice(left);
    out.extend_from_slice(right);
    out
}

/// Pulls the outer row first; the inner side is materialized only once an
/// outer row exists.
struct NestedLoop<'a> {
    outer: Box<dyn Node + 'a>,
    inner: Box<dyn Node + 'a>,
    key: &'a JoinKey,
    inner_rows: Option<Vec<Row>>,
    current: Option<Row>,
    idx: usize,
}

impl Node for NestedLoop<'_> {
    fn next(&mut self, ctx: &Ctx) -> Option<Row> {
        loop {
            if self.current.is_none() {
                self.current = Some(self.outer.next(ctx)?);
                self.idx = 0;
                if self.inner_rows.is_none() {
                    let mut rows = Vec::new();
                    while let Some(r) = self.inner.next(ctx) {
                        rows.push(r);
                    }
                    self.inner_rows = Some(rows);
                }
            }
            let outer = self.current.as_ref().expect("set above");
            let inner = self.inner_rows.as_ref().expect("materialized");
            while self.idx < inner.len() {
                let candidate = &inner[self.idx];
                self.idx += 1;
                ctx.charge(1);
                if outer[self.key.left] == candidate[self.key.right] {
                    return Some(concat(outer, candidate));
                }
            }
            self.current = None;
        }
    }
}

struct HashJoin<'a> {
    left: Box<dyn Node + 'a>,
    right: Box<dyn Node + 'a>,
    key: &'a JoinKey,
    build: BuildSide,
    buckets: Option<Vec<Vec<Row>>>,
    pending: Option<Row>,
    probe: Option<(Row, usize)>,
    entry: usize,
    done: bool,
}

fn bucket_of(row: &Row, pos: usize) -> usize {
    (row[pos].key_hash() % HASH_BUCKETS) as usize
}

impl HashJoin<'_> {
    /// Builds the hash table. Returns false when the join is empty.
    fn open(&mut self, ctx: &Ctx) -> bool {
        // The left input is always opened first.
        if self.build == BuildSide::Right {
            match self.left.next(ctx) {
                Some(first) => self.pending = Some(first),
                None => return false,
            }
        }
        let (source, pos) = match self.build {
            BuildSide::Left => (&mut self.left, self.key.left),
            BuildSide::Right => (&mut self.right, self.key.right),
        };
        let mut buckets = vec![Vec::new(); HASH_BUCKETS as usize];
        let mut any = false;
        while let Some(row) = source.next(ctx) {
            ctx.charge(1);
            buckets[bucket_of(&row, pos)].push(row);
            any = true;
        }
        self.buckets = Some(buckets);
        any
    }

    fn next_probe(&mut self, ctx: &Ctx) -> Option<Row> {
        if let Some(row) = self.pending.take() {
            return Some(row);
        }
        match self.build {
            BuildSide::Left => self.right.next(ctx),
            BuildSide::Right => self.left.next(ctx),
        }
    }
}

impl Node for HashJoin<'_> {
    fn next(&mut self, ctx: &Ctx) -> Option<Row> {
        if self.done {
            return None;
        }
        if self.buckets.is_none() && !self.open(ctx) {
            self.done = true;
            return None;
        }
        let (probe_pos, build_pos) = match self.build {
            BuildSide::Left => (self.key.right, self.key.left),
            BuildSide::Right => (self.key.left, self.key.right),
        };
        loop {
            if self.probe.is_none() {
                let row = self.next_probe(ctx)?;
                let bucket = bucket_of(&row, probe_pos);
                self.probe = Some((row, bucket));
                self.entry = 0;
            }
            let (probe, bucket) = self.probe.as_ref().expect("set above");
            let entries = &self.buckets.as_ref().expect("opened")[*bucket];
            while self.entry < entries.len() {
                let stored = &entries[self.entry];
                self.entry += 1;
                let matched = if ctx.flips.point(fp::HASH_RECHECK, true) {
                    ctx.charge(1);
                    stored[build_pos] == probe[probe_pos]
                } else {
                    true
                };
                if matched {
                    return Some(match self.build {
                        BuildSide::Left => concat(stored, probe),
                        BuildSide::Right => concat(probe, stored),
                    });
                }
            }
            self.probe = None;
        }
    }
}

struct Project<'a> {
    input: Box<dyn Node + 'a>,
    columns: &'a [usize],
}

impl Node for Project<'_> {
    fn next(&mut self, ctx: &Ctx) -> Option<Row> {
        let row = self.input.next(ctx)?;
        Some(self.columns.iter().map(|&i| row[i].clone()).collect())
    }
}

struct Limit<'a> {
    input: Box<dyn Node + 'a>,
    count: u64,
    early_stop: bool,
    produced: u64,
}

impl Node for Limit<'_> {
    fn next(&mut self, ctx: &Ctx) -> Option<Row> {
        if self.produced >= self.count {
            if !self.early_stop {
                while self.input.next(ctx).is_some() {}
            }
            return None;
        }
        let row = self.input.next(ctx)?;
        self.produced += 1;
        Some(row)
    }
}

fn build<'a>(node: &'a PlanNode, db: &'a Database) -> Box<dyn Node + 'a> {
    match &node.op {
        Operator::SeqScan { table } => Box::new(Scan {
            rows: db.table(table).map(|t| t.rows.as_slice()).unwrap_or(&[]),
            pos: 0,
        }),
        Operator::Filter { input, predicates } => Box::new(Filter {
            input: build(input, db),
            predicates,
        }),
        Operator::NestedLoopJoin { outer, inner, key } => Box::new(NestedLoop {
            outer: build(outer, db),
            inner: build(inner, db),
            key,
            inner_rows: None,
            current: None,
            idx: 0,
        }),
        Operator::HashJoin {
            left,
            right,
            key,
            build: side,
        } => Box::new(HashJoin {
            left: build(left, db),
            right: build(right, db),
            key,
            build: *side,
            buckets: None,
            pending: None,
            probe: None,
            entry: 0,
            done: false,
        }),
        Operator::Project { input, columns, .. } => Box::new(Project {
            input: build(input, db),
            columns,
        }),
        Operator::Limit {
            input,
            count,
            early_stop,
        } => Box::new(Limit {
            input: build(input, db),
            count: *count,
            early_stop: *early_stop,
            produced: 0,
        }),
    }
}

/// Runs `plan` to completion and returns its rows with work statistics.
pub fn execute_plan(plan: &Plan, db: &Database, flips: &FlipContext) -> (Vec<Row>, ExecStats) {
    let started = Instant::now();
    let ctx = Ctx {
        work: Cell::new(0),
        flips,
    };
    let mut root = build(&plan.root, db);
    let mut rows = Vec::new();
    while let Some(row) = root.next(&ctx) {
        ctx.charge(1);
        rows.push(row);
    }
    let stats = ExecStats {
        work_units: ctx.work.get(),
        rows_out: rows.len() as u64,
        wall_ms: started.elapsed().as_secs_f64() * 1000.0,
    };
    (rows, stats)
}
