//! Compile-and-run checks of instrumented C against the runtime shim.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use bfa::flipcore::{read_coverage_log, FlipEnv, DEFAULT_COVERAGE_VAR, DEFAULT_FLIP_VAR};
use bfa::instrument::{instrument_tree, SHIM_FILE};

pub const INPUTS: usize = 50;
const SOURCES: [&str; 2] = ["branches.c", "helper.c"];
/// Branch ids in the fixture program; `bN` output lines belong to id N.
pub const SITES: u32 = 5;

pub fn program_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/program")
}

/// First working C compiler on PATH.
pub fn find_cc() -> Option<String> {
    let mut names: Vec<String> = std::env::var("CC").into_iter().collect();
    names.extend(["cc", "gcc", "clang"].map(String::from));
    names.into_iter().find(|cc| {
        Command::new(cc)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
    })
}

fn compile(cc: &str, dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(cc)
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| format!("{cc}: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{cc} {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

/// Deterministic (x, y) pairs in -20..=20.
pub fn inputs() -> Vec<(i64, i64)> {
    let mut state: u64 = 0x2545_f491;
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 33) % 41) as i64 - 20
    };
    (0..INPUTS).map(|_| (next(), next())).collect()
}

/// Expected stdout when branch `id` is inverted: `bN` lines swap then/else.
pub fn invert(output: &str, id: u32) -> String {
    let prefix = format!("b{id} ");
    output
        .lines()
        .map(|l| {
            if !l.starts_with(&prefix) {
                l.to_string()
            } else if let Some(head) = l.strip_suffix("then") {
                format!("{head}else")
            } else if let Some(head) = l.strip_suffix("else") {
                format!("{head}then")
            } else {
                l.to_string()
            }
        })
        .map(|l| l + "\n")
        .collect()
}

pub struct Built {
    _dir: tempfile::TempDir,
    pub original: PathBuf,
    pub instrumented: PathBuf,
    pub root: PathBuf,
    pub sites: usize,
}

/// Builds the fixture program twice: as written, and instrumented + shim.
pub fn build(cc: &str) -> Result<Built, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let orig_dir = dir.path().join("orig");
    let root = dir.path().join("instr");
    for d in [&orig_dir, &root] {
        fs::create_dir_all(d).map_err(|e| e.to_string())?;
        for f in SOURCES {
            fs::copy(program_dir().join(f), d.join(f)).map_err(|e| e.to_string())?;
        }
    }
    let original = orig_dir.join("prog");
    compile(
        cc,
        &orig_dir,
        &["-std=c99", "-Wall", "-Werror", "-o", "prog", SOURCES[0], SOURCES[1]],
    )?;

    let manifest = instrument_tree(&root, &["*.c".to_string()], &FlipEnv::default()).map_err(|e| e.to_string())?;
    let shim = root.join(SHIM_FILE);
    let shim_arg = shim.to_string_lossy().into_owned();
    let mut objects = Vec::new();
    for f in SOURCES {
        let obj = f.replace(".c", ".o");
        compile(
            cc,
            &root,
            &[
                "-std=c99",
                "-Wall",
                "-Wextra",
                "-Werror",
                "-DBFA_RUNTIME_DECLS_ONLY",
                "-include",
                &shim_arg,
                "-c",
                f,
                "-o",
                &obj,
            ],
        )?;
        objects.push(obj);
    }
    compile(
        cc,
        &root,
        &[
            "-std=c89",
            "-pedantic",
            "-Wall",
            "-Wextra",
            "-Werror",
            "-c",
            SHIM_FILE,
            "-o",
            "shim.o",
        ],
    )?;
    let mut link = vec!["-o", "prog", "shim.o"];
    link.extend(objects.iter().map(String::as_str));
    compile(cc, &root, &link)?;
    Ok(Built {
        original,
        instrumented: root.join("prog"),
        sites: manifest.len(),
        root,
        _dir: dir,
    })
}

/// Runs `bin x y` with the flip variable set to `flip` (or unset) and
/// optionally a coverage file. Returns stdout.
pub fn run(bin: &Path, x: i64, y: i64, flip: Option<&str>, coverage: Option<&Path>) -> Result<String, String> {
    let mut cmd = Command::new(bin);
    cmd.arg(x.to_string()).arg(y.to_string());
    cmd.env_remove(DEFAULT_FLIP_VAR).env_remove(DEFAULT_COVERAGE_VAR);
    if let Some(f) = flip {
        cmd.env(DEFAULT_FLIP_VAR, f);
    }
    if let Some(c) = coverage {
        cmd.env(DEFAULT_COVERAGE_VAR, c);
    }
    let out = cmd.output().map_err(|e| format!("{}: {e}", bin.display()))?;
    if !out.status.success() {
        return Err(format!("{} {x} {y} exited with {}", bin.display(), out.status));
    }
    String::from_utf8(out.stdout).map_err(|e| e.to_string())
}

/// Full semantics check. `Ok(None)` when no C compiler is available.
pub fn check_flip_semantics() -> Result<Option<String>, String> {
    let Some(cc) = find_cc() else {
        return Ok(None);
    };
    let built = build(&cc)?;
    if built.sites != SITES as usize {
        return Err(format!("expected {SITES} sites, manifest has {}", built.sites));
    }
    let cov = built.root.join("run.cov");
    let mut flips_checked = 0;
    for (x, y) in inputs() {
        let plain = run(&built.original, x, y, None, None)?;
        let _ = fs::remove_file(&cov);
        let unflipped = run(&built.instrumented, x, y, None, Some(&cov))?;
        if unflipped != plain {
            return Err(format!(
                "input ({x}, {y}): unflipped output differs\n{plain}---\n{unflipped}"
            ));
        }
        let covered = read_coverage_log(&cov).map_err(|e| e.to_string())?;
        if covered.ids() != [1, 2, 3, 4, 5] {
            return Err(format!("input ({x}, {y}): coverage {:?}", covered.ids()));
        }
        for junk in ["", "0", "abc", "99"] {
            let out = run(&built.instrumented, x, y, Some(junk), None)?;
            if out != plain {
                return Err(format!("input ({x}, {y}): flip value {junk:?} changed output"));
            }
        }
        for id in 1..=SITES {
            let flipped = run(&built.instrumented, x, y, Some(&id.to_string()), None)?;
            let expected = invert(&plain, id);
            if flipped != expected {
                return Err(format!(
                    "input ({x}, {y}) flip {id}:\nexpected\n{expected}got\n{flipped}"
                ));
            }
            flips_checked += 1;
        }
    }
    Ok(Some(format!("{cc}: {INPUTS} inputs, {flips_checked} flipped runs")))
}
