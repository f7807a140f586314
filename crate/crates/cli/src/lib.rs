//! Library side of the `diffid` command: configuration parsing, the three
//! subcommands and the output files they write.

pub mod config;
pub mod output;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use diffid_core::experiment::examples::{describe, BUILTIN_IDS};
use diffid_core::experiment::{run_sweep, SweepRow};
use diffid_core::verify::{run_all, Faults};
use thiserror::Error;

pub use config::{parse_config, parse_config_str, ConfigFile};

/// Environment variable overriding the worker count.
pub const JOBS_ENV: &str = "DIFFID_JOBS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("{0} sweep point(s) failed")]
    RowFailure(usize),

    #[error("{0} verification check(s) failed")]
    VerifyFailure(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::RowFailure(_) | CliError::VerifyFailure(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

/// `--jobs`, then the environment, then the number of cores.
pub fn resolve_jobs(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(j) = flag {
        return if j == 0 {
            Err(CliError::Config("--jobs: must be at least 1".into()))
        } else {
            Ok(j)
        };
    }
    match std::env::var(JOBS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(j) if j > 0 => Ok(j),
            _ => Err(CliError::Config(format!("{JOBS_ENV}: expected a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub jobs: usize,
    /// Record measured wall times in rows.csv instead of zeros.
    pub wall_time: bool,
}

/// Parses `config`, runs the sweep and writes every output file into `out`.
/// Rows are returned even when some failed; the error then reports how many.
pub fn cmd_run(config: &Path, out: &Path, opts: RunOptions) -> Result<Vec<SweepRow>, CliError> {
    let (snapshot, sweep) = parse_config(config)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let start = Instant::now();
    let rows = run_sweep(&sweep, opts.jobs.max(1)).map_err(|e| CliError::Config(e.to_string()))?;
    let total = start.elapsed().as_secs_f64();
    output::write_all(out, &snapshot, &rows, opts.wall_time, total)?;
    let failed = rows.iter().filter(|r| !r.succeeded()).count();
    for r in rows.iter().filter(|r| !r.succeeded()) {
        eprintln!(
            "epsilon {:e}: {}",
            r.point.epsilon,
            r.failure.as_deref().unwrap_or("failed")
        );
    }
    if failed > 0 {
        return Err(CliError::RowFailure(failed));
    }
    Ok(rows)
}

/// Runs the verification suite and prints one line per check.
pub fn cmd_verify(faults: Faults, w: &mut impl Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    let checks = run_all(faults).map_err(|e| CliError::Io(format!("verification aborted: {e}")))?;
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        writeln!(
            w,
            "{}  {:<width$}  {:>13.6e}  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.bound
        )
        .map_err(io)?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::VerifyFailure(failed));
    }
    Ok(())
}

pub fn cmd_list_examples(w: &mut impl Write) -> Result<(), CliError> {
    for id in BUILTIN_IDS {
        writeln!(w, "{}", describe(id).expect("builtin id")).map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::RowFailure(2).exit_code(), 1);
        assert_eq!(CliError::VerifyFailure(1).exit_code(), 1);
        assert_eq!(CliError::Config(String::new()).exit_code(), 2);
        assert_eq!(CliError::Io(String::new()).exit_code(), 3);
    }

    #[test]
    fn explicit_jobs_win() {
        assert_eq!(resolve_jobs(Some(4)).unwrap(), 4);
        assert!(resolve_jobs(Some(0)).is_err());
    }
}
