use std::path::Path;

use super::config::Metric;
use crate::adapter::{Measurement, Target, TargetError};
use crate::flipcore::FlipSelection;

/// Lower median: for an even count, the smaller of the two middle values.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[(sorted.len() - 1) / 2])
}

/// Executes `query` `repeats` times and folds the runs into one measurement.
///
/// Wall time is the lower median; work units (under the work_units metric)
/// and digests must agree across runs. Coverage comes from the first run.
pub fn measure_with_repeats(
    target: &dyn Target,
    selection: FlipSelection,
    query: &str,
    repeats: u32,
    metric: Metric,
    coverage_path: &Path,
) -> Result<Measurement, TargetError> {
    assert!(repeats >= 1, "repeats must be >= 1");
    let first = target.execute(selection, query, coverage_path)?;
    let mut walls = vec![first.wall_ms];
    for run in 1..repeats {
        let m = target.execute(selection, query, coverage_path)?;
        if m.digest != first.digest {
            return Err(TargetError::Nondeterministic(format!(
                "result digest changed on repeat {}",
                run + 1
            )));
        }
        if metric == Metric::WorkUnits && m.work_units != first.work_units {
            return Err(TargetError::Nondeterministic(format!(
                "work units {:?} on repeat 1 but {:?} on repeat {}",
                first.work_units,
                m.work_units,
                run + 1
            )));
        }
        walls.push(m.wall_ms);
    }
    Ok(Measurement {
        wall_ms: lower_median(&walls).expect("at least one run"),
        ..first
    })
}

/// The configured metric's value in a measurement.
pub fn metric_value(m: &Measurement, metric: Metric) -> Result<f64, TargetError> {
    match metric {
        Metric::WorkUnits => m
            .work_units
            .map(|w| w as f64)
            .ok_or_else(|| TargetError::Parse("target does not report work units".into())),
        Metric::WallMs => Ok(m.wall_ms),
    }
}
