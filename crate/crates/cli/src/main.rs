use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diffid_cli::{cmd_list_examples, cmd_run, cmd_verify, resolve_jobs, CliError, RunOptions};
use diffid_core::verify::Faults;

/// Recover a diffusion coefficient from noisy observations over a sweep of
/// noise levels.
#[derive(Parser)]
#[command(name = "diffid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file (or a previous manifest).
    Run {
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; overrides DIFFID_JOBS.
        #[arg(long)]
        jobs: Option<usize>,
        /// Write measured wall times into rows.csv.
        #[arg(long)]
        wall_time: bool,
    },
    /// Check gradients, discretization orders, projections and noise.
    Verify {
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Print the builtin examples.
    ListExamples,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            wall_time,
        } => {
            let jobs = resolve_jobs(jobs)?;
            let rows = cmd_run(&config, &out, RunOptions { jobs, wall_time })?;
            println!("{} rows written to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Verify { corrupt_gradient } => cmd_verify(
            Faults {
                negate_gradient: corrupt_gradient,
            },
            &mut std::io::stdout(),
        ),
        Command::ListExamples => cmd_list_examples(&mut std::io::stdout()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("diffid: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
