//! Property checks, shared by the `properties` and `acceptance` targets.
//! Each returns the first failure found by proptest.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use bfa::campaign::{decide_verdict, lower_median, Validation, Verdict};
use bfa::flipcore::{flip_point, parse_selection, CoverageRecord, FlipContext, FlipSelection, MemorySink};
use bfa::instrument::{rewrite_source, scan_branch_sites, strip_guards};
use bfa::minidb::{
    generate_dataset, parse_query, result_digest, run_query_with, ColumnSpec, ColumnType, Database, DatasetSpec, Lcg,
    Row, Table, TableSpec, Value,
};

use super::oracle::naive_unlimited;

pub const CASES: u32 = 256;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

/// Flip result is `condition XOR selected`, and every evaluated id is
/// recorded once, in first-seen order.
pub fn xor_identities() -> Result<(), String> {
    let strat = (
        prop::collection::vec((1u32..20, any::<bool>()), 0..40),
        prop::option::of(1u32..20),
    );
    check(CASES, strat, |(calls, selected)| {
        let sel = selected.map_or(FlipSelection::NONE, FlipSelection::of);
        let sink = MemorySink::new();
        let mut first_seen = Vec::new();
        for &(id, cond) in &calls {
            let got = flip_point(id, cond, sel, &sink);
            prop_assert_eq!(got, cond ^ (selected == Some(id)));
            // Flipping twice is the identity; flipping an unselected id is a no-op.
            prop_assert_eq!(flip_point(id, got, sel, &sink), cond);
            if !first_seen.contains(&id) {
                first_seen.push(id);
            }
        }
        let covered = sink.snapshot();
        prop_assert_eq!(&covered, &CoverageRecord::from_raw(first_seen.iter().copied()));
        prop_assert_eq!(covered.ids(), first_seen.as_slice());
        // Selection survives the environment encoding.
        let encoded = sel.env_value().unwrap_or_default();
        prop_assert_eq!(parse_selection("BFA_FLIP", &encoded).unwrap(), sel);
        Ok(())
    })
}

fn c_condition() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "x",
        "x > 0",
        "a && b",
        "f(x, \")\")",
        "(p)",
        "c == '('",
        "n & 0x3",
        "!done",
        "s[i] != '\\0'",
    ])
    .prop_map(str::to_string)
}

/// Instrumenting random straight-line C and stripping the guards gives back
/// the original text; sites are numbered densely from the start id.
pub fn rewrite_round_trip() -> Result<(), String> {
    let stmt = (c_condition(), any::<bool>(), any::<bool>(), 0usize..3);
    let strat = (prop::collection::vec(stmt, 0..12), 1u32..50);
    check(CASES, strat, |(stmts, start)| {
        let mut src = String::from("int f(int x) {\n");
        for (cond, else_branch, comment, spaces) in &stmts {
            if *comment {
                src.push_str("    /* if (fake) */ // if (also_fake)\n");
            }
            src.push_str(&format!("    if{}({cond}) {{ g(); }}", " ".repeat(*spaces)));
            if *else_branch {
                src.push_str(" else { h(); }");
            }
            src.push('\n');
        }
        src.push_str("    return 0;\n}\n");
        let (sites, next) = scan_branch_sites(&src, "p.c", start).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(sites.len(), stmts.len());
        prop_assert_eq!(next, start + stmts.len() as u32);
        for (s, (cond, ..)) in sites.iter().zip(&stmts) {
            prop_assert_eq!(&s.condition_text, cond);
        }
        let out = rewrite_source(&src, &sites).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let (back, ids) = strip_guards(&out, "p.c").map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(back, src);
        prop_assert_eq!(ids, (start..next).collect::<Vec<_>>());
        Ok(())
    })
}

fn value() -> impl Strategy<Value = Value> {
    prop_oneof![(-50i64..50).prop_map(Value::Int), "[a-z]{0,4}".prop_map(Value::Text)]
}

/// The result digest ignores row order but not row content or count.
pub fn digest_order_insensitive() -> Result<(), String> {
    let rows = prop::collection::vec(prop::collection::vec(value(), 2), 1..30);
    let strat = rows.prop_flat_map(|r| {
        let n = r.len();
        (Just(r.clone()), Just(r).prop_shuffle(), 0..n)
    });
    check(CASES, strat, |(rows, shuffled, drop): (Vec<Row>, Vec<Row>, usize)| {
        let d = result_digest(&rows);
        prop_assert_eq!(d, result_digest(&shuffled));
        prop_assert_eq!(d.row_count, rows.len() as u64);
        let mut fewer = rows.clone();
        fewer.remove(drop);
        prop_assert_ne!(result_digest(&fewer), d);
        let mut dup = rows.clone();
        dup.push(rows[drop].clone());
        prop_assert_ne!(result_digest(&dup), d);
        Ok(())
    })
}

fn dataset_spec() -> impl Strategy<Value = DatasetSpec> {
    let column = (prop::bool::ANY, 1u64..500).prop_map(|(text, range)| ColumnSpec {
        name: String::new(),
        ty: if text { ColumnType::Text } else { ColumnType::Int },
        range: if text { None } else { Some(range) },
    });
    let table = (20u64..60, prop::collection::vec(column, 1..4));
    prop::collection::vec(table, 1..3).prop_map(|tables| DatasetSpec {
        seed: 0,
        tokens: ["ash", "bay", "cove", "dune"].map(String::from).to_vec(),
        tables: tables
            .into_iter()
            .enumerate()
            .map(|(i, (rows, mut columns))| {
                for (j, c) in columns.iter_mut().enumerate() {
                    c.name = format!("c{j}");
                }
                TableSpec {
                    name: format!("t{i}"),
                    rows,
                    columns,
                }
            })
            .collect(),
    })
}

/// Same seed, same bytes; a different seed gives a different dataset.
pub fn lcg_reproducible() -> Result<(), String> {
    check(CASES, (dataset_spec(), any::<u64>()), |(spec, seed)| {
        let a = generate_dataset(seed, &spec).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let b = generate_dataset(seed, &spec).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&a, &b);
        let c = generate_dataset(seed ^ 0x9e37_79b9, &spec).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_ne!(&a, &c);
        let (mut x, mut y) = (Lcg::new(seed), Lcg::new(seed));
        for _ in 0..64 {
            let v = x.draw();
            prop_assert_eq!(v, y.draw());
            prop_assert!(v < 1 << 31);
        }
        Ok(())
    })
}

/// The lower median is an input element with at most (n-1)/2 values below
/// it and at most n/2 above, regardless of order.
pub fn median_of_repeats() -> Result<(), String> {
    let strat = prop::collection::vec(0.0f64..1e6, 1..25).prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()));
    check(CASES, strat, |(values, shuffled)| {
        let m = lower_median(&values).unwrap();
        prop_assert_eq!(m, lower_median(&shuffled).unwrap());
        prop_assert!(values.contains(&m));
        let n = values.len();
        let below = values.iter().filter(|&&v| v < m).count();
        let above = values.iter().filter(|&&v| v > m).count();
        prop_assert!(below <= (n - 1) / 2, "{below} below of {n}");
        prop_assert!(above <= n / 2, "{above} above of {n}");
        if n == 1 {
            prop_assert_eq!(m, values[0]);
        }
        prop_assert!(lower_median(&[]).is_none());
        Ok(())
    })
}

/// Verdicts follow the ratio and validation exactly.
pub fn verdict_rule() -> Result<(), String> {
    let strat = (0.0f64..1e6, 0.0f64..1e6, 0.01f64..0.99, any::<bool>());
    check(CASES, strat, |(base, flipped, thr, ok)| {
        let validation = if ok {
            Validation::Pass
        } else {
            Validation::fail("v", "x")
        };
        let (verdict, ratio) = decide_verdict(base, flipped, thr, &validation);
        if flipped > 0.0 {
            prop_assert_eq!(ratio, base / flipped);
        }
        let expected = if !ok {
            Verdict::FunctionalityAltering
        } else if ratio >= 1.0 + thr {
            Verdict::Issue
        } else {
            Verdict::NoGain
        };
        prop_assert_eq!(verdict, expected);
        Ok(())
    })
}

fn small_db(a: &[(i64, i64)], b: &[(i64, i64)]) -> Database {
    let mut db = Database::new();
    let mut ta = Table::new("a", vec![("k", ColumnType::Int), ("v", ColumnType::Int)]);
    for &(k, v) in a {
        ta.push(vec![Value::Int(k), Value::Int(v)]).unwrap();
    }
    let mut tb = Table::new("b", vec![("k", ColumnType::Int), ("w", ColumnType::Int)]);
    for &(k, w) in b {
        tb.push(vec![Value::Int(k), Value::Int(w)]).unwrap();
    }
    db.add_table(ta).unwrap();
    db.add_table(tb).unwrap();
    db
}

fn predicate() -> impl Strategy<Value = String> {
    let col = prop::sample::select(vec!["a.k", "a.v", "b.k", "b.w"]);
    let op = prop::sample::select(vec!["=", "<", ">", "<=", ">=", "<>"]);
    (col, op, -2i64..12).prop_map(|(c, o, n)| format!("{c} {o} {n}"))
}

/// Random two-table joins on random data agree with the naive evaluator
/// under every result-preserving flip.
pub fn engine_matches_naive(cases: u32) -> Result<(), String> {
    let rows = || prop::collection::vec((0i64..10, 0i64..10), 0..25);
    let proj = prop::sample::select(vec!["*", "a.k, b.w", "b.w, a.v, a.k"]);
    let strat = (
        rows(),
        rows(),
        proj,
        prop::collection::vec(predicate(), 0..3),
        prop::sample::select(vec![0u32, 1, 2, 4, 6]),
    );
    check(cases, strat, |(ra, rb, proj, preds, flip)| {
        let db = small_db(&ra, &rb);
        let mut sql = format!("SELECT {proj} FROM a JOIN b ON a.k = b.k");
        if !preds.is_empty() {
            sql.push_str(" WHERE ");
            sql.push_str(&preds.join(" AND "));
        }
        let ast = parse_query(&sql).map_err(|e| TestCaseError::fail(format!("{sql}: {e}")))?;
        let expected = super::multiset(&naive_unlimited(&db, &ast));
        let sel = if flip == 0 {
            FlipSelection::NONE
        } else {
            FlipSelection::of(flip)
        };
        let sink = MemorySink::new();
        let run =
            run_query_with(&db, &sql, &FlipContext::new(sel, &sink)).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(super::multiset(&run.rows), expected, "{} flip {}", sql, flip);
        Ok(())
    })
}
