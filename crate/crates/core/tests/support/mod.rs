//! Shared test helpers: workload paths and two independent reference
//! executors for the bundled engine.
#![allow(dead_code)]

pub mod checks;
pub mod cprog;
pub mod oracle;
pub mod props;

use std::path::{Path, PathBuf};

use bfa::campaign::{load_queries, WorkloadQuery};
use bfa::minidb::{load_database, Database};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

pub fn w1_dir() -> PathBuf {
    repo_root().join("workloads/W1")
}

pub fn validate_dir() -> PathBuf {
    repo_root().join("workloads/validate")
}

pub fn w1_db() -> Database {
    load_database(&w1_dir().join("data")).unwrap()
}

pub fn w1_queries() -> Vec<WorkloadQuery> {
    load_queries(&w1_dir()).unwrap()
}

pub fn validate_queries() -> Vec<WorkloadQuery> {
    load_queries(&validate_dir()).unwrap()
}

/// Sorted canonical lines of a row multiset.
pub fn multiset(rows: &[bfa::minidb::Row]) -> Vec<String> {
    let mut v: Vec<String> = rows.iter().map(bfa::minidb::row_line).collect();
    v.sort();
    v
}

/// True when `small` is a sub-multiset of `big` (both sorted).
pub fn is_submultiset(small: &[String], big: &[String]) -> bool {
    let mut j = 0;
    for s in small {
        while j < big.len() && big[j] < *s {
            j += 1;
        }
        if j == big.len() || big[j] != *s {
            return false;
        }
        j += 1;
    }
    true
}
