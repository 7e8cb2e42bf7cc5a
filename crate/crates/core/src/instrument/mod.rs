//! Source-to-source branch instrumentation for C-like code.
//!
//! Every `if (C)` in the selected files becomes
//! `if (((C) ^ (__bfa_log(N) && (__bfa_flip_id() == N))))`. The target is
//! compiled once against the emitted runtime shim; afterwards any single
//! branch can be inverted by setting the flip variable to its id, and every
//! evaluated site is appended to the coverage file.

mod rewrite;
mod scan;
mod shim;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use globset::{Glob, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::flipcore::FlipEnv;

pub use rewrite::{guard, is_instrumented, rewrite_source, strip_guards, FLIP_FN, LOG_FN};
pub use scan::{scan_branch_sites, BranchSite};
pub use shim::{emit_runtime_shim, shim_source, SHIM_FILE};

pub const MANIFEST_FILE: &str = "bfa-manifest.json";
pub const BACKUP_DIR: &str = ".bfa-backup";
const STAGING_PREFIX: &str = ".bfa-staging-";

#[derive(Debug, Error)]
pub enum InstrumentError {
    #[error("{file}:{line}: {message}")]
    Syntax { file: String, line: usize, message: String },
    #[error("{0}: already instrumented")]
    AlreadyInstrumented(String),
    #[error("{file}:{line}: site does not match source text")]
    SiteMismatch { file: String, line: usize },
    #[error("no files matched {0:?}")]
    NoFiles(Vec<String>),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

impl InstrumentError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        InstrumentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// The set of flippable sites in an instrumented tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(rename = "version")]
    pub tool_version: String,
    #[serde(flatten)]
    pub env: FlipEnv,
    #[serde(rename = "shim")]
    pub shim_file: String,
    pub sites: Vec<BranchSite>,
    #[serde(skip)]
    pub instrumented_root: PathBuf,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, InstrumentError> {
        let text = fs::read_to_string(path).map_err(|e| InstrumentError::io(path, e))?;
        let mut manifest = Manifest::from_json(&text).map_err(|e| InstrumentError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        manifest.instrumented_root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.check().map_err(|message| InstrumentError::Manifest {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(manifest)
    }

    /// Ids must be exactly 1..=n in order.
    pub fn check(&self) -> Result<(), String> {
        for (idx, site) in self.sites.iter().enumerate() {
            if site.id as usize != idx + 1 {
                return Err(format!("site ids not dense: position {} has id {}", idx + 1, site.id));
            }
        }
        self.env.validate().map_err(|e| e.to_string())
    }

    pub fn site(&self, id: u32) -> Option<&BranchSite> {
        id.checked_sub(1).and_then(|i| self.sites.get(i as usize))
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

struct PlannedFile {
    rel: String,
    original: String,
    rewritten: String,
}

/// Selects files under `root` matching any glob, in lexicographic order of
/// their `/`-separated relative paths.
pub fn select_files(root: &Path, include_globs: &[String]) -> Result<Vec<String>, InstrumentError> {
    let mut builder = GlobSetBuilder::new();
    for pattern in include_globs {
        let glob = Glob::new(pattern).map_err(|e| InstrumentError::Config(format!("bad glob {pattern:?}: {e}")))?;
        builder.add(glob);
    }
    let set = builder.build().map_err(|e| InstrumentError::Config(e.to_string()))?;

    let mut files = Vec::new();
    let walker = WalkDir::new(root)
        .follow_links(false)
        .into_iter()
        .filter_entry(|entry| {
            let name = entry.file_name().to_string_lossy();
            entry.depth() == 0 || !(name == BACKUP_DIR || name.starts_with(STAGING_PREFIX))
        });
    for entry in walker {
        let entry = entry.map_err(|e| InstrumentError::Config(e.to_string()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("walk stays under root");
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if rel == SHIM_FILE || rel == MANIFEST_FILE {
            continue;
        }
        if set.is_match(&rel) {
            files.push(rel);
        }
    }
    files.sort();
    Ok(files)
}

/// Instruments every matching file under `root` in place.
///
/// Nothing is written unless every file scans and rewrites cleanly. Originals
/// are copied under `.bfa-backup/`, the runtime shim and `bfa-manifest.json`
/// are written at the root.
pub fn instrument_tree(root: &Path, include_globs: &[String], env: &FlipEnv) -> Result<Manifest, InstrumentError> {
    env.validate().map_err(|e| InstrumentError::Config(e.to_string()))?;
    if !root.is_dir() {
        return Err(InstrumentError::Config(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let files = select_files(root, include_globs)?;
    if files.is_empty() {
        return Err(InstrumentError::NoFiles(include_globs.to_vec()));
    }

    let mut planned = Vec::with_capacity(files.len());
    let mut sites = Vec::new();
    let mut next_id = 1;
    for rel in files {
        let path = root.join(&rel);
        let original = fs::read_to_string(&path).map_err(|e| InstrumentError::io(&path, e))?;
        if is_instrumented(&original) {
            return Err(InstrumentError::AlreadyInstrumented(rel));
        }
        let (file_sites, next) = scan_branch_sites(&original, &rel, next_id)?;
        let rewritten = rewrite_source(&original, &file_sites)?;
        next_id = next;
        sites.extend(file_sites);
        planned.push(PlannedFile {
            rel,
            original,
            rewritten,
        });
    }

    // Stage everything first so a failure leaves the tree untouched.
    let staging = tempfile::Builder::new()
        .prefix(STAGING_PREFIX)
        .tempdir_in(root)
        .map_err(|e| InstrumentError::io(root, e))?;
    for file in &planned {
        let staged = staging.path().join(&file.rel);
        write_with_parents(&staged, &file.rewritten)?;
    }
    let backup_root = root.join(BACKUP_DIR);
    for file in &planned {
        write_with_parents(&backup_root.join(&file.rel), &file.original)?;
    }
    for file in &planned {
        let staged = staging.path().join(&file.rel);
        let target = root.join(&file.rel);
        fs::rename(&staged, &target).map_err(|e| InstrumentError::io(&target, e))?;
    }

    emit_runtime_shim(root, env)?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        env: env.clone(),
        shim_file: SHIM_FILE.to_string(),
        sites,
        instrumented_root: root.to_path_buf(),
    };
    let manifest_path = root.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest.to_json()).map_err(|e| InstrumentError::io(&manifest_path, e))?;
    Ok(manifest)
}

fn write_with_parents(path: &Path, contents: &str) -> Result<(), InstrumentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| InstrumentError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| InstrumentError::io(path, e))
}
