//! Run-time flip protocol.
//!
//! A run selects at most one branch id through an environment variable. Every
//! flip point reports its id to a coverage sink and returns its condition
//! XOR'd with "this is the selected id". The same contract is implemented by
//! the C runtime shim emitted by [`crate::instrument`], so in-process targets
//! and instrumented binaries are driven identically.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_FLIP_VAR: &str = "BFA_FLIP";
pub const DEFAULT_COVERAGE_VAR: &str = "BFA_COVERAGE_FILE";

/// Names of the two environment variables that control a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipEnv {
    pub flip_var: String,
    pub coverage_var: String,
}

impl Default for FlipEnv {
    fn default() -> Self {
        FlipEnv {
            flip_var: DEFAULT_FLIP_VAR.to_string(),
            coverage_var: DEFAULT_COVERAGE_VAR.to_string(),
        }
    }
}

impl FlipEnv {
    pub fn new(flip_var: impl Into<String>, coverage_var: impl Into<String>) -> Result<Self, FlipError> {
        let env = FlipEnv {
            flip_var: flip_var.into(),
            coverage_var: coverage_var.into(),
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<(), FlipError> {
        for name in [&self.flip_var, &self.coverage_var] {
            if !is_env_identifier(name) {
                return Err(FlipError::BadVarName(name.clone()));
            }
        }
        if self.flip_var == self.coverage_var {
            return Err(FlipError::BadVarName(self.flip_var.clone()));
        }
        Ok(())
    }
}

fn is_env_identifier(name: &str) -> bool {
    let mut bytes = name.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_alphabetic() || b == b'_' => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlipError {
    #[error("{var}={value:?} is not a branch id (expected a positive decimal integer, empty, or 0)")]
    BadSelection { var: String, value: String },
    #[error("invalid environment variable name {0:?}")]
    BadVarName(String),
    #[error("{path}: line {line}: {text:?} is not a branch id")]
    BadCoverageLine { path: PathBuf, line: usize, text: String },
    #[error("{path}: {message}")]
    CoverageIo { path: PathBuf, message: String },
}

/// The single branch flipped for one run, or none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlipSelection(Option<u32>);

impl FlipSelection {
    pub const NONE: FlipSelection = FlipSelection(None);

    /// Selects `id`; id 0 means "no flip".
    pub fn of(id: u32) -> Self {
        FlipSelection(if id == 0 { None } else { Some(id) })
    }

    pub fn selected(&self) -> Option<u32> {
        self.0
    }

    pub fn is_selected(&self, id: u32) -> bool {
        self.0 == Some(id)
    }

    /// Value to place in the flip variable of a child process, if any.
    pub fn env_value(&self) -> Option<String> {
        self.0.map(|id| id.to_string())
    }
}

impl fmt::Display for FlipSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(id) => write!(f, "flip {id}"),
            None => f.write_str("no flip"),
        }
    }
}

/// Parses a raw flip variable value.
pub fn parse_selection(var: &str, raw: &str) -> Result<FlipSelection, FlipError> {
    let value = raw.trim();
    if value.is_empty() {
        return Ok(FlipSelection::NONE);
    }
    if !value.bytes().all(|b| b.is_ascii_digit()) {
        return Err(FlipError::BadSelection {
            var: var.to_string(),
            value: raw.to_string(),
        });
    }
    value
        .parse::<u32>()
        .map(FlipSelection::of)
        .map_err(|_| FlipError::BadSelection {
            var: var.to_string(),
            value: raw.to_string(),
        })
}

/// Reads the flip selection out of an environment snapshot.
pub fn resolve_flip_env(environment: &BTreeMap<String, String>, names: &FlipEnv) -> Result<FlipSelection, FlipError> {
    match environment.get(&names.flip_var) {
        None => Ok(FlipSelection::NONE),
        Some(raw) => parse_selection(&names.flip_var, raw),
    }
}

/// Same as [`resolve_flip_env`] over the current process environment.
pub fn resolve_process_env(names: &FlipEnv) -> Result<FlipSelection, FlipError> {
    match std::env::var_os(&names.flip_var) {
        None => Ok(FlipSelection::NONE),
        Some(raw) => parse_selection(&names.flip_var, &raw.to_string_lossy()),
    }
}

/// Executed branch ids, unique, in first-occurrence order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoverageRecord {
    ids: Vec<u32>,
}

impl CoverageRecord {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a record from raw (possibly repeated) ids.
    pub fn from_raw<I: IntoIterator<Item = u32>>(raw: I) -> Self {
        let mut record = CoverageRecord::new();
        for id in raw {
            record.push(id);
        }
        record
    }

    /// Appends `id` unless already present. Returns whether it was new.
    pub fn push(&mut self, id: u32) -> bool {
        if id == 0 || self.ids.contains(&id) {
            return false;
        }
        self.ids.push(id);
        true
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn contains(&self, id: u32) -> bool {
        self.ids.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Receives one notification per flip-point evaluation.
pub trait CoverageSink: Sync {
    fn record(&self, id: u32);
}

/// Discards everything.
pub struct NullSink;

impl CoverageSink for NullSink {
    fn record(&self, _id: u32) {}
}

/// Buffers ids in memory; written out once the run completes.
#[derive(Default)]
pub struct MemorySink {
    inner: Mutex<(Vec<u32>, HashSet<u32>)>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> CoverageRecord {
        let guard = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        CoverageRecord { ids: guard.0.clone() }
    }

    /// Writes the buffered ids, one per line, truncating `path`.
    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for id in self.snapshot().ids() {
            writeln!(out, "{id}")?;
        }
        out.flush()
    }
}

impl CoverageSink for MemorySink {
    fn record(&self, id: u32) {
        let mut guard = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if guard.1.insert(id) {
            guard.0.push(id);
        }
    }
}

/// Appends one line per evaluation to a file, like the C shim does.
///
/// Write failures are reported once on stderr and then ignored so the hot
/// path never fails.
pub struct FileSink {
    path: PathBuf,
    file: Mutex<Option<File>>,
    failed: AtomicBool,
}

impl FileSink {
    pub fn open(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let file = OpenOptions::new().create(true).append(true).open(&path);
        let failed = AtomicBool::new(false);
        let file = match file {
            Ok(f) => Some(f),
            Err(e) => {
                log::warn!("coverage log {} unavailable: {e}", path.display());
                failed.store(true, Ordering::Relaxed);
                None
            }
        };
        FileSink {
            path,
            file: Mutex::new(file),
            failed,
        }
    }

    pub fn has_failed(&self) -> bool {
        self.failed.load(Ordering::Relaxed)
    }
}

impl CoverageSink for FileSink {
    fn record(&self, id: u32) {
        let mut guard = self.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(file) = guard.as_mut() {
            if let Err(e) = writeln!(file, "{id}") {
                if !self.failed.swap(true, Ordering::Relaxed) {
                    log::warn!("coverage log {} write failed: {e}", self.path.display());
                }
                *guard = None;
            }
        }
    }
}

/// The flip primitive. `condition` must already be evaluated by the caller.
#[inline]
pub fn flip_point(id: u32, condition: bool, selection: FlipSelection, coverage: &dyn CoverageSink) -> bool {
    coverage.record(id);
    condition ^ selection.is_selected(id)
}

/// A selection bundled with its coverage sink, handed down through a run.
pub struct FlipContext<'a> {
    pub selection: FlipSelection,
    pub coverage: &'a dyn CoverageSink,
}

impl<'a> FlipContext<'a> {
    pub fn new(selection: FlipSelection, coverage: &'a dyn CoverageSink) -> Self {
        FlipContext { selection, coverage }
    }

    #[inline]
    pub fn point(&self, id: u32, condition: bool) -> bool {
        flip_point(id, condition, self.selection, self.coverage)
    }
}

/// Parses a coverage log. A missing file yields an empty record.
pub fn read_coverage_log(path: &Path) -> Result<CoverageRecord, FlipError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            log::warn!("coverage log {} not found; treating as empty", path.display());
            return Ok(CoverageRecord::new());
        }
        Err(e) => {
            return Err(FlipError::CoverageIo {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        }
    };
    parse_coverage_text(&text).map_err(|(line, text)| FlipError::BadCoverageLine {
        path: path.to_path_buf(),
        line,
        text,
    })
}

/// Parses newline-delimited ids; on failure returns the 1-based line and its text.
pub fn parse_coverage_text(text: &str) -> Result<CoverageRecord, (usize, String)> {
    let mut record = CoverageRecord::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match trimmed.parse::<u32>() {
            Ok(id) if id >= 1 => {
                record.push(id);
            }
            _ => return Err((idx + 1, line.to_string())),
        }
    }
    Ok(record)
}
