//! Branch-flip analysis toolkit.
//!
//! * [`flipcore`] - the run-time flip protocol shared by every target.
//! * [`instrument`] - rewrites `if` conditions in C sources into flip guards.
//! * [`minidb`] - a small deterministic query engine with built-in flip points.
//! * [`adapter`] - uniform explain/execute contract over in-process and external targets.
//! * [`campaign`] - baseline run, coverage-gated flips, validation, and verdicts.
//! * [`report`] - issue grouping, coverage statistics, and report rendering.
//! * [`cli`] - the `bfa` command line.

pub mod adapter;
pub mod campaign;
pub mod cli;
pub mod flipcore;
pub mod instrument;
pub mod minidb;
pub mod report;
