use std::fmt::Write as _;

use super::planner::{BuildSide, Operator, Plan, PlanNode};

fn detail(node: &PlanNode) -> String {
    match &node.op {
        Operator::SeqScan { table } => table.clone(),
        Operator::Filter { predicates, .. } => predicates.iter().map(|p| p.render()).collect::<Vec<_>>().join(" AND "),
        Operator::NestedLoopJoin { key, .. } => key.label.clone(),
        Operator::HashJoin { key, build, .. } => {
            let side = match build {
                BuildSide::Left => "left",
                BuildSide::Right => "right",
            };
            format!("{}, build={side}", key.label)
        }
        Operator::Project { labels, star, .. } => {
            if *star {
                "*".to_string()
            } else {
                labels.join(", ")
            }
        }
        Operator::Limit { count, early_stop, .. } => {
            if *early_stop {
                count.to_string()
            } else {
                format!("{count}, drain")
            }
        }
    }
}

fn render(node: &PlanNode, depth: usize, out: &mut String) {
    let _ = writeln!(
        out,
        "{:indent$}{}({}) rows={} cost={}",
        "",
        node.kind(),
        detail(node),
        node.est_rows,
        node.est_cost,
        indent = depth * 2
    );
    for child in node.children() {
        render(child, depth + 1, out);
    }
}

/// One node per line, two spaces of indent per level, then the total.
pub fn render_plan(plan: &Plan) -> String {
    let mut out = String::new();
    render(&plan.root, 0, &mut out);
    let _ = writeln!(out, "Total cost: {}", plan.total_cost());
    out
}
