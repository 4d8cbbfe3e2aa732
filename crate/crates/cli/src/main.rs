//! `cdsmooth`: simulate data, run the smoother, verify against oracles and
//! summarise sample files.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use cdsmooth::verify::Level;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "cdsmooth", version, about = "Smoothing of discretely observed diffusions")]
struct Cli {
    /// Log progress to stderr (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a path and observations from the `[observations.simulate]` block.
    Simulate {
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory (default: config `output_dir`, then $CDSMOOTH_OUTPUT_DIR, then ./cdsmooth-output).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the smoother and write samples, summary, traces, acceptance log and provenance.
    Smooth {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the oracle checks and print a JSON report.
    Verify {
        /// fast, full or paper.
        #[arg(short, long, default_value = "fast")]
        level: Level,
        #[arg(short, long, default_value_t = 1)]
        seed: u64,
        /// Write the JSON report here instead of stdout.
        #[arg(short, long)]
        report: Option<PathBuf>,
    },
    /// Per-knot mean, sd and 1.96-sd bands of a samples file.
    Summarize {
        samples: PathBuf,
        /// Output file (default: stdout).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Ignore saved paths with iteration below this.
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose {
        "info"
    } else {
        "warn"
    }))
    .init();
    let outcome = match &cli.command {
        Command::Simulate { config, output } => commands::simulate(config, output.as_deref()),
        Command::Smooth { config, output } => commands::smooth(config, output.as_deref()),
        Command::Verify { level, seed, report } => commands::verify(*level, *seed, report.as_deref()),
        Command::Summarize {
            samples,
            output,
            burn_in,
        } => commands::summarize(samples, output.as_deref(), *burn_in),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
