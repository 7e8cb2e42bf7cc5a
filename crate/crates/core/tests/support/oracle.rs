//! Reference executors.
//!
//! `naive_unlimited` evaluates a parsed query straight from its AST with
//! nested loops over the tables in query order, then the projection. It
//! knows nothing about plans.
//!
//! `replay_plan` walks a plan tree, materializing each operator completely,
//! and reconstructs how many work units the pull executor spends from
//! per-row cumulative counts. It assumes the hash recheck is in place.

use std::cmp::Ordering;

use bfa::minidb::{
    BuildSide, ColumnRef, CompareOp, Database, Operator, Plan, PlanNode, Projection, QueryAst, Row, Value,
};

fn cmp(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Text(x), Value::Text(y)) => x.as_bytes().cmp(y.as_bytes()),
        _ => panic!("type mismatch in oracle: {a:?} vs {b:?}"),
    }
}

fn holds(op: CompareOp, ord: Ordering) -> bool {
    match op.symbol() {
        "=" => ord == Ordering::Equal,
        "<" => ord == Ordering::Less,
        ">" => ord == Ordering::Greater,
        "<=" => ord != Ordering::Greater,
        ">=" => ord != Ordering::Less,
        "<>" => ord != Ordering::Equal,
        s => panic!("unknown operator {s}"),
    }
}

/// (table, column) for every position of the concatenated row.
fn layout(db: &Database, ast: &QueryAst) -> Vec<(String, String)> {
    std::iter::once(&ast.base)
        .chain(ast.joins.iter().map(|j| &j.table))
        .flat_map(|t| {
            db.table(t)
                .unwrap()
                .columns
                .iter()
                .map(move |c| (t.clone(), c.name.clone()))
        })
        .collect()
}

fn resolve(layout: &[(String, String)], c: &ColumnRef) -> usize {
    let hits: Vec<usize> = layout
        .iter()
        .enumerate()
        .filter(|(_, (t, col))| *col == c.column && c.table.as_ref().is_none_or(|want| want == t))
        .map(|(i, _)| i)
        .collect();
    assert_eq!(hits.len(), 1, "column {c:?} must resolve uniquely");
    hits[0]
}

/// Every result row of the query without its LIMIT.
pub fn naive_unlimited(db: &Database, ast: &QueryAst) -> Vec<Row> {
    let tables: Vec<&Vec<Row>> = std::iter::once(&ast.base)
        .chain(ast.joins.iter().map(|j| &j.table))
        .map(|t| &db.table(t).unwrap().rows)
        .collect();
    let lay = layout(db, ast);
    let joins: Vec<(usize, usize)> = ast
        .joins
        .iter()
        .map(|j| (resolve(&lay, &j.left), resolve(&lay, &j.right)))
        .collect();
    let preds: Vec<(usize, CompareOp, &Value)> = ast
        .predicates
        .iter()
        .map(|p| (resolve(&lay, &p.column), p.op, &p.constant))
        .collect();
    let proj: Vec<usize> = match &ast.projection {
        Projection::Star => (0..lay.len()).collect(),
        Projection::Columns(cols) => cols.iter().map(|c| resolve(&lay, c)).collect(),
    };

    // Nested loops over the tables in query order; each condition is applied
    // as soon as every column it mentions is present.
    let mut product: Vec<Row> = vec![Vec::new()];
    for rows in tables {
        let mut next = Vec::new();
        for prefix in &product {
            for r in rows {
                let mut row = prefix.clone();
                row.extend(r.iter().cloned());
                let (old, width) = (prefix.len(), row.len());
                let joins_ok = joins
                    .iter()
                    .filter(|&&(l, r)| (old..width).contains(&l.max(r)))
                    .all(|&(l, r)| cmp(&row[l], &row[r]) == Ordering::Equal);
                let preds_ok = preds
                    .iter()
                    .filter(|&&(i, _, _)| (old..width).contains(&i))
                    .all(|&(i, op, c)| holds(op, cmp(&row[i], c)));
                if joins_ok && preds_ok {
                    next.push(row);
                }
            }
        }
        product = next;
    }
    product
        .into_iter()
        .map(|row| proj.iter().map(|&i| row[i].clone()).collect())
        .collect()
}

fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn bucket(v: &Value) -> u64 {
    let h = match v {
        Value::Int(i) => *i as u64,
        Value::Text(s) => fnv(s.as_bytes()),
    };
    h % 8
}

/// A fully materialized operator output plus its pull-time work profile.
pub struct Trace {
    pub rows: Vec<Row>,
    /// Cumulative work when row k was returned.
    pub at: Vec<u64>,
    /// Cumulative work when the operator returned end-of-stream.
    pub total: u64,
}

fn concat(a: &Row, b: &Row) -> Row {
    a.iter().chain(b.iter()).cloned().collect()
}

fn hash_probe(
    build: &Trace,
    key_build: usize,
    probe: &Trace,
    key_probe: usize,
    build_is_left: bool,
    base: u64,
) -> (Vec<Row>, Vec<u64>, u64) {
    let mut buckets: Vec<Vec<&Row>> = vec![Vec::new(); 8];
    for r in &build.rows {
        buckets[bucket(&r[key_build]) as usize].push(r);
    }
    let (mut rows, mut at, mut comps) = (Vec::new(), Vec::new(), 0u64);
    for (j, p) in probe.rows.iter().enumerate() {
        for stored in &buckets[bucket(&p[key_probe]) as usize] {
            comps += 1;
            if cmp(&stored[key_build], &p[key_probe]) == Ordering::Equal {
                rows.push(if build_is_left {
                    concat(stored, p)
                } else {
                    concat(p, stored)
                });
                at.push(base + probe.at[j] + comps);
            }
        }
    }
    (rows, at, comps)
}

pub fn replay(node: &PlanNode, db: &Database) -> Trace {
    match &node.op {
        Operator::SeqScan { table } => {
            let rows = db.table(table).unwrap().rows.clone();
            let n = rows.len() as u64;
            Trace {
                at: (1..=n).collect(),
                rows,
                total: n,
            }
        }
        Operator::Filter { input, predicates } => {
            let child = replay(input, db);
            let (mut rows, mut at, mut evals) = (Vec::new(), Vec::new(), 0u64);
            for (i, r) in child.rows.iter().enumerate() {
                let mut keep = true;
                for p in predicates {
                    evals += 1;
                    if !holds(p.op, cmp(&r[p.position], &p.constant)) {
                        keep = false;
                        break;
                    }
                }
                if keep {
                    rows.push(r.clone());
                    at.push(child.at[i] + evals);
                }
            }
            Trace {
                rows,
                at,
                total: child.total + evals,
            }
        }
        Operator::Project { input, columns, .. } => {
            let child = replay(input, db);
            Trace {
                rows: child
                    .rows
                    .iter()
                    .map(|r| columns.iter().map(|&i| r[i].clone()).collect())
                    .collect(),
                at: child.at,
                total: child.total,
            }
        }
        Operator::Limit {
            input,
            count,
            early_stop,
        } => {
            let child = replay(input, db);
            let n = child.rows.len();
            let keep = (*count as usize).min(n);
            let total = if *early_stop && (*count as usize) < n {
                if keep == 0 {
                    0
                } else {
                    child.at[keep - 1]
                }
            } else {
                child.total
            };
            Trace {
                rows: child.rows[..keep].to_vec(),
                at: child.at[..keep].to_vec(),
                total,
            }
        }
        Operator::NestedLoopJoin { outer, inner, key } => {
            let o = replay(outer, db);
            let i = replay(inner, db);
            if o.rows.is_empty() {
                return Trace {
                    rows: vec![],
                    at: vec![],
                    total: o.total,
                };
            }
            let (mut rows, mut at, mut comps) = (Vec::new(), Vec::new(), 0u64);
            for (k, orow) in o.rows.iter().enumerate() {
                for irow in &i.rows {
                    comps += 1;
                    if cmp(&orow[key.left], &irow[key.right]) == Ordering::Equal {
                        rows.push(concat(orow, irow));
                        at.push(o.at[k] + i.total + comps);
                    }
                }
            }
            Trace {
                rows,
                at,
                total: o.total + i.total + comps,
            }
        }
        Operator::HashJoin {
            left,
            right,
            key,
            build,
        } => {
            let l = replay(left, db);
            let r = replay(right, db);
            match build {
                BuildSide::Left => {
                    if l.rows.is_empty() {
                        return Trace {
                            rows: vec![],
                            at: vec![],
                            total: l.total,
                        };
                    }
                    let base = l.total + l.rows.len() as u64;
                    let (rows, at, comps) = hash_probe(&l, key.left, &r, key.right, true, base);
                    Trace {
                        rows,
                        at,
                        total: base + r.total + comps,
                    }
                }
                BuildSide::Right => {
                    if l.rows.is_empty() {
                        return Trace {
                            rows: vec![],
                            at: vec![],
                            total: l.total,
                        };
                    }
                    if r.rows.is_empty() {
                        return Trace {
                            rows: vec![],
                            at: vec![],
                            total: l.at[0] + r.total,
                        };
                    }
                    let base = r.total + r.rows.len() as u64;
                    let (rows, at, comps) = hash_probe(&r, key.right, &l, key.left, false, base);
                    Trace {
                        rows,
                        at,
                        total: base + l.total + comps,
                    }
                }
            }
        }
    }
}

/// Rows and total work units of running `plan` to completion, root output included.
pub fn replay_plan(plan: &Plan, db: &Database) -> (Vec<Row>, u64) {
    let t = replay(&plan.root, db);
    let n = t.rows.len() as u64;
    (t.rows, t.total + n)
}
