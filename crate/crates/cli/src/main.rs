use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use photogeo_cli::{plot_trace, run_experiment, validate_config, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "photogeo", version, about = "Loop-closure localization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML file.
    Run {
        spec: PathBuf,
        /// Validate the file, print the resolved experiment and exit.
        #[arg(long)]
        check: bool,
        /// Override the seed base.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot a fusion trace (JSON lines) as two SVG files.
    Plot {
        log: PathBuf,
        /// Output directory (default: next to the log).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run {
            spec,
            check,
            seed,
            jobs,
            out,
        } => {
            let resolved = validate_config(&spec)?;
            if check {
                print!("{}", resolved.to_toml());
                return Ok(());
            }
            let result = run_experiment(&resolved, &RunOptions { seed, jobs, out })?;
            print!("{}", result.table.to_csv());
            eprintln!("wrote {} and {}", result.csv.display(), result.jsonl.display());
        }
        Command::Plot { log, out } => {
            let dir = out.unwrap_or_else(|| log.parent().map(PathBuf::from).unwrap_or_default());
            let (a, b) = plot_trace(&log, &dir)?;
            eprintln!("wrote {} and {}", a.display(), b.display());
        }
    }
    Ok(())
}
