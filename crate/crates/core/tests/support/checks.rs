//! Whole-suite checks that return a summary or the first failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use regex::Regex;

use bfa::flipcore::{FlipEnv, FlipSelection};
use bfa::instrument::{instrument_tree, rewrite_source, scan_branch_sites, strip_guards, Manifest, MANIFEST_FILE};
use bfa::minidb::{explain_query, parse_query, run_query, Database};

use super::oracle::{naive_unlimited, replay_plan};
use super::{is_submultiset, multiset, validate_queries, w1_db, w1_dir, w1_queries};

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}
#[allow(unused_imports)]
pub(crate) use ensure;

pub const FIXTURE_SITES: usize = 27;
const RESULT_PRESERVING: [u32; 4] = [1, 2, 3, 4];

pub fn fixture_dir() -> PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/transform")
}

pub fn fixtures() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "c"))
        .collect();
    v.sort();
    v
}

/// Counts `if (` keywords with regexes alone: blank out comments and
/// literals, drop directive lines, then match the keyword.
pub fn naive_if_count(source: &str) -> usize {
    let lexical = Regex::new(r#"(?s)/\*.*?\*/|//[^\n]*|"(?:\\.|[^"\\\n])*"|'(?:\\.|[^'\\\n])*'"#).unwrap();
    let blanked = lexical.replace_all(source, |c: &regex::Captures| {
        c[0].chars()
            .map(|ch| if ch == '\n' { '\n' } else { ' ' })
            .collect::<String>()
    });
    let mut code = String::new();
    let mut continued = false;
    for line in blanked.split('\n') {
        let directive = continued || line.trim_start().starts_with('#');
        continued = directive && line.trim_end().ends_with('\\');
        if !directive {
            code.push_str(line);
            code.push('\n');
        }
    }
    Regex::new(r"\bif\s*\(").unwrap().find_iter(&code).count()
}

/// Every fixture instruments to its `.expected` bytes and strips back to
/// the original. With `regen`, the expected files are rewritten first.
pub fn transform_fixtures(regen: bool) -> Result<String, String> {
    let files = fixtures();
    ensure!(files.len() >= 12, "need at least 12 fixtures, found {}", files.len());
    let mut total_sites = 0;
    for path in &files {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let source = fs::read_to_string(path).map_err(|e| format!("{name}: {e}"))?;
        let (sites, next) = scan_branch_sites(&source, &name, 1).map_err(|e| format!("{name}: {e}"))?;
        ensure!(next as usize == sites.len() + 1, "{name}: next id {next}");
        let out = rewrite_source(&source, &sites).map_err(|e| format!("{name}: {e}"))?;

        let expected_path = path.with_extension("c.expected");
        if regen {
            fs::write(&expected_path, &out).unwrap();
        }
        let expected = fs::read_to_string(&expected_path).map_err(|e| format!("{name}: {e}"))?;
        ensure!(out == expected, "{name}: instrumented text differs from golden");

        let (stripped, ids) = strip_guards(&out, &name).map_err(|e| format!("{name}: {e}"))?;
        ensure!(stripped == source, "{name}: strip does not restore the original");
        ensure!(
            ids == (1..=sites.len() as u32).collect::<Vec<_>>(),
            "{name}: ids {ids:?}"
        );

        let naive = naive_if_count(&source);
        ensure!(
            sites.len() == naive,
            "{name}: {} sites, naive counter says {naive}",
            sites.len()
        );
        for s in &sites {
            ensure!(
                source[s.span.0..s.span.1] == s.condition_text,
                "{name} site {}: span does not cover the condition",
                s.id
            );
        }
        total_sites += sites.len();
    }
    ensure!(
        total_sites == FIXTURE_SITES,
        "{total_sites} sites, expected {FIXTURE_SITES}"
    );
    Ok(format!(
        "{} fixtures, {total_sites} sites byte-exact, strip round-trips",
        files.len()
    ))
}

/// Instruments all fixtures as one tree twice; ids are dense, follow file
/// order, and serialize identically.
pub fn transform_tree() -> Result<String, String> {
    let build = || -> Result<(tempfile::TempDir, Manifest), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        for path in fixtures() {
            fs::copy(&path, dir.path().join(path.file_name().unwrap())).map_err(|e| e.to_string())?;
        }
        let m = instrument_tree(dir.path(), &["*.c".to_string()], &FlipEnv::default()).map_err(|e| e.to_string())?;
        Ok((dir, m))
    };
    let (dir, manifest) = build()?;
    ensure!(
        manifest.len() == FIXTURE_SITES,
        "tree manifest has {} sites",
        manifest.len()
    );
    let loaded = Manifest::load(&dir.path().join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    ensure!(loaded.sites == manifest.sites, "manifest on disk differs");
    let order: Vec<&str> = manifest.sites.iter().map(|s| s.file.as_str()).collect();
    let mut sorted = order.clone();
    sorted.sort();
    ensure!(order == sorted, "sites not in file order");
    for (i, s) in manifest.sites.iter().enumerate() {
        ensure!(s.id as usize == i + 1, "site {} has id {}", i + 1, s.id);
    }
    let (_again, second) = build()?;
    ensure!(second.to_json() == manifest.to_json(), "ids are not stable across runs");
    Ok(format!("{} ids dense and stable", manifest.len()))
}

pub type Golden = BTreeMap<String, BTreeMap<String, u64>>;

pub fn golden_path() -> PathBuf {
    w1_dir().join("expected_work_units.json")
}

pub fn load_golden() -> Golden {
    serde_json::from_str(&fs::read_to_string(golden_path()).unwrap()).unwrap()
}

/// Result-preserving flips the query's baseline run reaches.
pub fn reachable(db: &Database, sql: &str) -> Vec<u32> {
    let base = run_query(db, sql, FlipSelection::NONE).unwrap();
    base.coverage
        .ids()
        .iter()
        .copied()
        .filter(|id| RESULT_PRESERVING.contains(id))
        .collect()
}

/// Work units per W1 query for the baseline and each reachable
/// result-preserving flip, from replaying the engine's plans through the
/// reference executor.
pub fn oracle_work_units(db: &Database) -> Golden {
    let mut out = Golden::new();
    for q in w1_queries() {
        let mut entry = BTreeMap::new();
        let selections = std::iter::once(("baseline".to_string(), FlipSelection::NONE)).chain(
            reachable(db, &q.sql)
                .into_iter()
                .map(|id| (format!("flip_{id}"), FlipSelection::of(id))),
        );
        for (name, sel) in selections {
            let (plan, _) = explain_query(db, &q.sql, sel).unwrap();
            entry.insert(name, replay_plan(&plan, db).1);
        }
        out.insert(q.id, entry);
    }
    out
}

/// Oracle work units match the committed golden file, and so does the engine.
pub fn golden_work_units(regen: bool) -> Result<String, String> {
    let db = w1_db();
    let computed = oracle_work_units(&db);
    if regen {
        fs::write(golden_path(), serde_json::to_string_pretty(&computed).unwrap() + "\n").unwrap();
    }
    let golden = load_golden();
    ensure!(
        computed == golden,
        "reference executor disagrees with {}",
        golden_path().display()
    );
    let mut n = 0;
    for q in w1_queries() {
        for (name, expected) in &golden[&q.id] {
            let sel = match name.strip_prefix("flip_") {
                Some(id) => FlipSelection::of(id.parse().unwrap()),
                None => FlipSelection::NONE,
            };
            let run = run_query(&db, &q.sql, sel).map_err(|e| e.to_string())?;
            ensure!(
                run.stats.work_units == *expected,
                "{} {name}: engine {} != golden {expected}",
                q.id,
                run.stats.work_units
            );
            n += 1;
        }
    }
    Ok(format!("{n} golden work-unit values"))
}

/// Engine rows equal the naive evaluator's on W1 and the validation suite,
/// baseline and every reachable result-preserving flip. LIMIT queries
/// without ORDER BY may return any valid subset, so those are checked for
/// size and containment.
pub fn engine_rows_match_reference() -> Result<String, String> {
    let db = w1_db();
    let mut checked = 0;
    for q in w1_queries().into_iter().chain(validate_queries()) {
        let ast = parse_query(&q.sql).map_err(|e| format!("{}: {e}", q.id))?;
        let full = multiset(&naive_unlimited(&db, &ast));
        let sels =
            std::iter::once(FlipSelection::NONE).chain(reachable(&db, &q.sql).into_iter().map(FlipSelection::of));
        for sel in sels {
            let run = run_query(&db, &q.sql, sel).map_err(|e| format!("{}: {e}", q.id))?;
            let got = multiset(&run.rows);
            let (replayed, work) = replay_plan(&run.plan, &db);
            ensure!(
                got == multiset(&replayed),
                "{} {sel:?}: rows differ from plan replay",
                q.id
            );
            ensure!(
                run.stats.work_units == work,
                "{} {sel:?}: work units {} != {work}",
                q.id,
                run.stats.work_units
            );
            match ast.limit {
                None => ensure!(got == full, "{} {sel:?}: rows differ from naive evaluation", q.id),
                Some(n) => {
                    ensure!(
                        got.len() as u64 == n.min(full.len() as u64),
                        "{} {sel:?}: {} rows",
                        q.id,
                        got.len()
                    );
                    ensure!(
                        is_submultiset(&got, &full),
                        "{} {sel:?}: rows not in naive result",
                        q.id
                    );
                }
            }
            checked += 1;
        }
    }
    ensure!(checked >= 48, "only {checked} (query, flip) runs checked");
    Ok(format!("{checked} (query, selection) runs equal the naive multisets"))
}
