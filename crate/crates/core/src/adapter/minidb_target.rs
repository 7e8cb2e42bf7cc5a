use std::path::Path;

use super::{Measurement, Target, TargetError};
use crate::flipcore::{read_coverage_log, FlipContext, FlipSelection, MemorySink, NullSink};
use crate::minidb::{self, load_database, Database, DbError, FLIP_POINTS};

/// The bundled engine, run in process with its database loaded once.
pub struct MinidbTarget {
    db: Database,
}

fn target_err(e: DbError) -> TargetError {
    TargetError::Target {
        code: Some(if e.is_sql() { 2 } else { 3 }),
        stderr: e.to_string(),
    }
}

impl MinidbTarget {
    pub fn open(dir: &Path) -> Result<Self, DbError> {
        Ok(MinidbTarget {
            db: load_database(dir)?,
        })
    }

    pub fn from_database(db: Database) -> Self {
        MinidbTarget { db }
    }

    pub fn database(&self) -> &Database {
        &self.db
    }
}

impl Target for MinidbTarget {
    fn explain(&self, selection: FlipSelection, query: &str) -> Result<Measurement, TargetError> {
        let ast = minidb::parse_query(query).map_err(target_err)?;
        let plan = minidb::plan(&ast, &self.db, &FlipContext::new(selection, &NullSink)).map_err(target_err)?;
        Ok(Measurement {
            est_cost: Some(plan.total_cost() as f64),
            plan_text: Some(minidb::render_plan(&plan)),
            ..Measurement::empty()
        })
    }

    fn execute(&self, selection: FlipSelection, query: &str, coverage_path: &Path) -> Result<Measurement, TargetError> {
        let sink = MemorySink::new();
        let run = minidb::run_query_with(&self.db, query, &FlipContext::new(selection, &sink));
        // Written even on failure so the file never holds a previous run's ids.
        sink.write_to(coverage_path)
            .map_err(|e| TargetError::io(&coverage_path.display().to_string(), e))?;
        let run = run.map_err(target_err)?;
        let coverage = read_coverage_log(coverage_path).map_err(|e| TargetError::Parse(e.to_string()))?;
        Ok(Measurement {
            work_units: Some(run.stats.work_units),
            wall_ms: run.stats.wall_ms,
            digest: Some(run.digest),
            coverage,
            ..Measurement::empty()
        })
    }

    fn builtin_flip_points(&self) -> Option<usize> {
        Some(FLIP_POINTS.len())
    }
}
