//! Plan-shape rules checked against indented explain text.

use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::CampaignError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRule {
    pub parent: String,
    pub requires_child: String,
}

impl std::fmt::Display for PlanRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "parent={} requires_child={}", self.parent, self.requires_child)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based line of the offending parent node.
    pub line: usize,
    pub rule: PlanRule,
}

/// Parses `parent=<Kind> requires_child=<Kind>` lines. Blank lines and
/// `#` comments are skipped.
pub fn parse_rules(text: &str) -> Result<Vec<PlanRule>, CampaignError> {
    let re = Regex::new(r"^parent=(\w+)\s+requires_child=(\w+)$").expect("static pattern");
    let mut rules = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let caps = re
            .captures(line)
            .ok_or_else(|| CampaignError::Config(format!("plan rules line {}: malformed rule {line:?}", idx + 1)))?;
        rules.push(PlanRule {
            parent: caps[1].to_string(),
            requires_child: caps[2].to_string(),
        });
    }
    Ok(rules)
}

pub fn load_rules(path: &Path) -> Result<Vec<PlanRule>, CampaignError> {
    let text = fs::read_to_string(path).map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))?;
    parse_rules(&text)
}

struct PlanLine {
    line: usize,
    depth: usize,
    kind: String,
}

/// Node lines look like `<indent><Kind>(...`; everything else is ignored.
fn plan_lines(explain_text: &str) -> Vec<PlanLine> {
    let re = Regex::new(r"^( *)([A-Za-z_]\w*)\(").expect("static pattern");
    explain_text
        .lines()
        .enumerate()
        .filter_map(|(idx, l)| {
            re.captures(l).map(|c| PlanLine {
                line: idx + 1,
                depth: c[1].len(),
                kind: c[2].to_string(),
            })
        })
        .collect()
}

/// Returns one violation per (node, rule) whose parent kind matches and that
/// has no direct child of the required kind.
pub fn check_plan_invariants(explain_text: &str, rules: &[PlanRule]) -> Vec<Violation> {
    let nodes = plan_lines(explain_text);
    let mut out = Vec::new();
    for (i, node) in nodes.iter().enumerate() {
        // Direct children: following lines one level deeper, until depth
        // returns to this node's level. Indent width is taken from the first child.
        let mut children = Vec::new();
        let mut child_depth = None;
        for next in &nodes[i + 1..] {
            if next.depth <= node.depth {
                break;
            }
            let d = *child_depth.get_or_insert(next.depth);
            if next.depth == d {
                children.push(next.kind.as_str());
            }
        }
        for rule in rules.iter().filter(|r| r.parent == node.kind) {
            if !children.contains(&rule.requires_child.as_str()) {
                out.push(Violation {
                    line: node.line,
                    rule: rule.clone(),
                });
            }
        }
    }
    out
}
