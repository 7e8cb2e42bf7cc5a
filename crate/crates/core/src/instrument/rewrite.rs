use std::sync::OnceLock;

use regex::Regex;

use super::scan::{scan_branch_sites, BranchSite};
use super::InstrumentError;

pub const LOG_FN: &str = "__bfa_log";
pub const FLIP_FN: &str = "__bfa_flip_id";

/// The guarded form of condition `cond` for site `id`.
pub fn guard(cond: &str, id: u32) -> String {
    format!("(({cond}) ^ ({LOG_FN}({id}) && ({FLIP_FN}() == {id})))")
}

pub fn is_instrumented(source: &str) -> bool {
    source.contains("__bfa_log(")
}

/// Replaces every site's condition with its guarded form. All other bytes
/// are left untouched.
pub fn rewrite_source(source: &str, sites: &[BranchSite]) -> Result<String, InstrumentError> {
    let file = sites.first().map(|s| s.file.as_str()).unwrap_or("<input>");
    if is_instrumented(source) {
        return Err(InstrumentError::AlreadyInstrumented(file.to_string()));
    }
    let mut out = String::with_capacity(source.len() + sites.len() * 64);
    let mut copied = 0;
    for site in sites {
        let (start, end) = site.span;
        if start < copied || end > source.len() || source.get(start..end) != Some(site.condition_text.as_str()) {
            return Err(InstrumentError::SiteMismatch {
                file: site.file.clone(),
                line: site.line,
            });
        }
        out.push_str(&source[copied..start]);
        out.push_str(&guard(&site.condition_text, site.id));
        copied = end;
    }
    out.push_str(&source[copied..]);
    Ok(out)
}

fn guard_tail() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^ \^ \(__bfa_log\(([0-9]+)\) && \(__bfa_flip_id\(\) == ([0-9]+)\)\)\)$").unwrap())
}

/// Undoes [`rewrite_source`]: every guarded condition is replaced by the
/// original condition it wraps. Returns the text and the ids found.
pub fn strip_guards(instrumented: &str, file: &str) -> Result<(String, Vec<u32>), InstrumentError> {
    let (sites, _) = scan_branch_sites(instrumented, file, 1)?;
    let mut out = String::with_capacity(instrumented.len());
    let mut ids = Vec::new();
    let mut copied = 0;
    for site in sites {
        let Some((inner, id)) = unwrap_guard(&site.condition_text) else {
            continue;
        };
        let (start, end) = site.span;
        out.push_str(&instrumented[copied..start]);
        out.push_str(inner);
        copied = end;
        ids.push(id);
    }
    out.push_str(&instrumented[copied..]);
    Ok((out, ids))
}

/// Splits `((C) ^ (...))` into `C` and its id.
fn unwrap_guard(cond: &str) -> Option<(&str, u32)> {
    let body = cond.strip_prefix("((")?;
    let close = matching_close(body)?;
    let inner = &body[..close];
    let caps = guard_tail().captures(&body[close + 1..])?;
    let (a, b) = (caps.get(1)?.as_str(), caps.get(2)?.as_str());
    if a != b {
        return None;
    }
    Some((inner, a.parse().ok()?))
}

/// Index of the `)` that closes an already-open paren at the start of
/// `text`, skipping literals and comments.
fn matching_close(text: &str) -> Option<usize> {
    // Reuse the scanner: "if (" + text has its condition end exactly there.
    let probe = format!("if ({text}");
    let (sites, _) = scan_branch_sites(&probe, "", 1).ok()?;
    let first = sites.first()?;
    Some(first.span.1 - 4)
}
