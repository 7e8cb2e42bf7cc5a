use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use regex::Regex;

use super::{ConfigError, ExternalConfig, Measurement, Target, TargetError};
use crate::flipcore::{read_coverage_log, FlipEnv, FlipSelection};
use crate::minidb::{digest_lines, ResultDigest};

/// Replaced, inside each argument, by the path of a file holding the query.
pub const QUERY_PLACEHOLDER: &str = "{query_file}";

const POLL: Duration = Duration::from_millis(5);

/// Drives a target binary through explain/execute command templates.
///
/// Commands are split with shell quoting rules but never run through a
/// shell, and the query reaches the child only as a file path.
pub struct ExternalTarget {
    config: ExternalConfig,
    env: FlipEnv,
    explain_argv: Vec<String>,
    execute_argv: Vec<String>,
    cost: Regex,
    work_units: Option<Regex>,
    digest: Option<Regex>,
}

fn split_template(name: &str, template: &str) -> Result<Vec<String>, ConfigError> {
    let argv = shell_words::split(template).map_err(|e| ConfigError(format!("{name}: {e}")))?;
    if argv.is_empty() {
        return Err(ConfigError(format!("{name} is empty")));
    }
    if !argv.iter().any(|a| a.contains(QUERY_PLACEHOLDER)) {
        return Err(ConfigError(format!("{name} must contain {QUERY_PLACEHOLDER}")));
    }
    Ok(argv)
}

fn compile(name: &str, pattern: &str) -> Result<Regex, ConfigError> {
    let re = Regex::new(pattern).map_err(|e| ConfigError(format!("{name}: {e}")))?;
    if re.captures_len() < 2 {
        return Err(ConfigError(format!("{name} needs a capture group")));
    }
    Ok(re)
}

struct Output {
    stdout: String,
    stderr: String,
    wall_ms: f64,
}

fn drain<R: Read + Send + 'static>(source: Option<R>) -> JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut s) = source {
            let _ = s.read_to_end(&mut buf);
        }
        buf
    })
}

fn wait_with_timeout(child: &mut Child, timeout: Duration) -> Result<Option<ExitStatus>, TargetError> {
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(status) = child.try_wait().map_err(|e| TargetError::io("wait", e))? {
            return Ok(Some(status));
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(None);
        }
        thread::sleep(POLL);
    }
}

/// First capture of `re` in `primary`, else in `secondary`.
fn capture<'t>(re: &Regex, primary: &'t str, secondary: &'t str) -> Option<regex::Captures<'t>> {
    re.captures(primary).or_else(|| re.captures(secondary))
}

impl ExternalTarget {
    pub fn new(config: ExternalConfig, env: FlipEnv) -> Result<Self, ConfigError> {
        env.validate().map_err(|e| ConfigError(e.to_string()))?;
        if !(config.timeout_s > 0.0 && config.timeout_s.is_finite()) {
            return Err(ConfigError(format!(
                "timeout_s must be positive, got {}",
                config.timeout_s
            )));
        }
        let explain_argv = split_template("explain_cmd", &config.explain_cmd)?;
        let execute_argv = split_template("execute_cmd", &config.execute_cmd)?;
        let cost = compile("cost_pattern", &config.cost_pattern)?;
        let work_units = config
            .work_units_pattern
            .as_deref()
            .map(|p| compile("work_units_pattern", p))
            .transpose()?;
        let digest = config
            .digest_pattern
            .as_deref()
            .map(|p| compile("digest_pattern", p))
            .transpose()?;
        if !config.restart_between_flips {
            log::info!("restart_between_flips=false has no effect: every call starts a new process");
        }
        Ok(ExternalTarget {
            config,
            env,
            explain_argv,
            execute_argv,
            cost,
            work_units,
            digest,
        })
    }

    fn run(
        &self,
        argv: &[String],
        selection: FlipSelection,
        query: &str,
        coverage_path: Option<&Path>,
    ) -> Result<Output, TargetError> {
        let mut query_file = tempfile::Builder::new()
            .prefix("bfa-query-")
            .suffix(".sql")
            .tempfile()
            .map_err(|e| TargetError::io("query file", e))?;
        query_file
            .write_all(query.as_bytes())
            .and_then(|_| query_file.flush())
            .map_err(|e| TargetError::io("query file", e))?;
        let query_path = query_file.path().to_string_lossy().into_owned();
        let args: Vec<String> = argv.iter().map(|a| a.replace(QUERY_PLACEHOLDER, &query_path)).collect();

        let mut cmd = Command::new(&args[0]);
        cmd.args(&args[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .envs(&self.config.extra_env);
        if let Some(dir) = &self.config.workdir {
            cmd.current_dir(dir);
        }
        match selection.env_value() {
            Some(v) => cmd.env(&self.env.flip_var, v),
            None => cmd.env_remove(&self.env.flip_var),
        };
        match coverage_path {
            Some(p) => cmd.env(&self.env.coverage_var, p),
            None => cmd.env_remove(&self.env.coverage_var),
        };

        let started = Instant::now();
        let mut child = cmd
            .spawn()
            .map_err(|e| TargetError::io(&format!("spawn {}", args[0]), e))?;
        let out = drain(child.stdout.take());
        let err = drain(child.stderr.take());
        let status = wait_with_timeout(&mut child, Duration::from_secs_f64(self.config.timeout_s))?;
        let wall_ms = started.elapsed().as_secs_f64() * 1000.0;
        let Some(status) = status else {
            // Grandchildren may still hold the pipes; the reader threads are left to finish on their own.
            if let Some(p) = coverage_path {
                let _ = fs::write(p, "");
            }
            return Err(TargetError::Timeout(self.config.timeout_s));
        };
        let stdout = String::from_utf8_lossy(&out.join().unwrap_or_default()).into_owned();
        let stderr = String::from_utf8_lossy(&err.join().unwrap_or_default()).into_owned();
        if !status.success() {
            return Err(TargetError::Target {
                code: status.code(),
                stderr: stderr.trim_end().to_string(),
            });
        }
        Ok(Output {
            stdout,
            stderr,
            wall_ms,
        })
    }

    fn parse_digest(&self, out: &Output) -> Result<ResultDigest, TargetError> {
        let Some(re) = &self.digest else {
            return Ok(digest_lines(out.stdout.lines()));
        };
        let caps = capture(re, &out.stdout, &out.stderr)
            .ok_or_else(|| TargetError::Parse(format!("digest_pattern {:?} did not match", re.as_str())))?;
        let digest =
            u64::from_str_radix(&caps[1], 16).map_err(|e| TargetError::Parse(format!("digest {:?}: {e}", &caps[1])))?;
        let row_count = match caps.get(2) {
            Some(m) => m
                .as_str()
                .parse()
                .map_err(|e| TargetError::Parse(format!("row count {:?}: {e}", m.as_str())))?,
            None => 0,
        };
        Ok(ResultDigest { digest, row_count })
    }
}

impl Target for ExternalTarget {
    fn explain(&self, selection: FlipSelection, query: &str) -> Result<Measurement, TargetError> {
        let out = self.run(&self.explain_argv, selection, query, None)?;
        let caps = capture(&self.cost, &out.stdout, &out.stderr)
            .ok_or_else(|| TargetError::Parse(format!("cost_pattern {:?} did not match", self.cost.as_str())))?;
        let cost: f64 = caps[1]
            .parse()
            .map_err(|e| TargetError::Parse(format!("cost {:?}: {e}", &caps[1])))?;
        Ok(Measurement {
            est_cost: Some(cost),
            wall_ms: out.wall_ms,
            plan_text: Some(out.stdout),
            ..Measurement::empty()
        })
    }

    fn execute(&self, selection: FlipSelection, query: &str, coverage_path: &Path) -> Result<Measurement, TargetError> {
        fs::write(coverage_path, "").map_err(|e| TargetError::io(&coverage_path.display().to_string(), e))?;
        let out = self.run(&self.execute_argv, selection, query, Some(coverage_path))?;
        let work_units = match &self.work_units {
            Some(re) => {
                let caps = capture(re, &out.stderr, &out.stdout)
                    .ok_or_else(|| TargetError::Parse(format!("work_units_pattern {:?} did not match", re.as_str())))?;
                Some(
                    caps[1]
                        .parse()
                        .map_err(|e| TargetError::Parse(format!("work units {:?}: {e}", &caps[1])))?,
                )
            }
            None => None,
        };
        let digest = self.parse_digest(&out)?;
        let coverage = read_coverage_log(coverage_path).map_err(|e| TargetError::Parse(e.to_string()))?;
        Ok(Measurement {
            work_units,
            wall_ms: out.wall_ms,
            digest: Some(digest),
            coverage,
            ..Measurement::empty()
        })
    }
}
