use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser};

use bfa::flipcore::{resolve_process_env, FlipContext, FlipEnv, MemorySink};
use bfa::minidb::{self, load_database, row_line, DbError};

/// Run a query against a directory of CSV tables.
///
/// Honors BFA_FLIP (branch id to flip) and BFA_COVERAGE_FILE (where to append
/// executed flip-point ids).
#[derive(Parser, Debug)]
#[command(name = "minidb", version)]
#[command(group(ArgGroup::new("mode").required(true).args(["explain", "execute", "digest"])))]
#[command(group(ArgGroup::new("sql").required(true).args(["query", "query_file"])))]
struct Args {
    /// Directory holding `<table>.csv` files.
    #[arg(long)]
    db: PathBuf,
    /// Print the plan tree and its estimated cost.
    #[arg(long)]
    explain: bool,
    /// Print result rows, one per line, tab-separated.
    #[arg(long)]
    execute: bool,
    /// Print the result digest and row count.
    #[arg(long)]
    digest: bool,
    #[arg(long)]
    query: Option<String>,
    /// Read the query text from a file.
    #[arg(long)]
    query_file: Option<PathBuf>,
    /// Also print `work_units=.. wall_ms=.. rows=.. digest=..` to stderr.
    #[arg(long)]
    stats: bool,
}

const EXIT_SQL: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("minidb: {message}");
            ExitCode::from(code)
        }
    }
}

fn db_err(e: DbError) -> (u8, String) {
    let code = if e.is_sql() { EXIT_SQL } else { EXIT_RUNTIME };
    (code, e.to_string())
}

fn run(args: &Args) -> Result<(), (u8, String)> {
    let names = FlipEnv::default();
    let selection = resolve_process_env(&names).map_err(|e| (EXIT_SQL, e.to_string()))?;
    let sql = match (&args.query, &args.query_file) {
        (Some(q), _) => q.clone(),
        (None, Some(path)) => {
            std::fs::read_to_string(path).map_err(|e| (EXIT_RUNTIME, format!("{}: {e}", path.display())))?
        }
        (None, None) => unreachable!("clap requires one"),
    };
    let db = load_database(&args.db).map_err(db_err)?;

    let sink = MemorySink::new();
    let flips = FlipContext::new(selection, &sink);
    let result = run_mode(args, &db, &sql, &flips);

    if let Some(path) = std::env::var_os(&names.coverage_var).filter(|p| !p.is_empty()) {
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| (EXIT_RUNTIME, format!("coverage file: {e}")))?;
        for id in sink.snapshot().ids() {
            writeln!(file, "{id}").map_err(|e| (EXIT_RUNTIME, format!("coverage file: {e}")))?;
        }
    }
    result
}

fn run_mode(args: &Args, db: &minidb::Database, sql: &str, flips: &FlipContext) -> Result<(), (u8, String)> {
    let io_err = |e: io::Error| (EXIT_RUNTIME, e.to_string());
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    if args.explain {
        let ast = minidb::parse_query(sql).map_err(db_err)?;
        let text = minidb::explain(&ast, db, flips).map_err(db_err)?;
        out.write_all(text.as_bytes()).map_err(io_err)?;
        return out.flush().map_err(io_err);
    }
    let run = minidb::run_query_with(db, sql, flips).map_err(db_err)?;
    if args.execute {
        for row in &run.rows {
            writeln!(out, "{}", row_line(row)).map_err(io_err)?;
        }
    } else {
        writeln!(out, "digest={} rows={}", run.digest, run.digest.row_count).map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    if args.stats {
        eprintln!(
            "work_units={} wall_ms={:.3} rows={} digest={}",
            run.stats.work_units, run.stats.wall_ms, run.stats.rows_out, run.digest
        );
    }
    Ok(())
}
