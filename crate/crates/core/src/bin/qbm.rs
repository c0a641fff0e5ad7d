use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use qbm::cli::{run, CliError, RunConfig, RunOptions, Stage};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Kernels,
    Propagator,
    Covariance,
    Coeffs,
    L1,
    Evolve,
    Oracle,
    Check,
    Validate,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Self {
        match c {
            Command::Kernels => Stage::Kernels,
            Command::Propagator => Stage::Propagator,
            Command::Covariance => Stage::Covariance,
            Command::Coeffs => Stage::Coeffs,
            Command::L1 => Stage::L1,
            Command::Evolve => Stage::Evolve,
            Command::Oracle => Stage::Oracle,
            Command::Check => Stage::Check,
            Command::Validate => Stage::Validate,
        }
    }
}

/// Strong-coupling quantum Brownian motion pipeline.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Pipeline stage to run (prerequisite stages run first).
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides outputs.directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Oracle seed (overrides oracle.seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Print achieved tolerances and write tolerances.json.
    #[arg(long)]
    tolerance_report: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: `config`: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let config = match RunConfig::from_toml(&text) {
        Ok(c) => c,
        Err(d) => {
            eprint!("{d}");
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        out: args.out,
        seed: args.seed,
        threads: args.threads,
        tolerance_report: args.tolerance_report,
    };
    match run(&config, args.command.into(), &opts) {
        Ok(report) => {
            print!("{}", report.render(args.tolerance_report));
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let CliError::Consistency { report, .. } = &e {
                print!("{}", report.render(args.tolerance_report));
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
