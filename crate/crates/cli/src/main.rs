//! `deadline`: solve, simulate and check the deadline spending model.
//!
//! Exit status: 0 on success, 1 when a check fails or a computation
//! breaks down, 2 for usage and configuration errors.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Job, Outcome};
use config::Overrides;

#[derive(Parser)]
#[command(name = "deadline", version, about = "Optimal spending of a stock before a deadline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the value function and write it as CSV and JSON.
    Solve(Common),
    /// Write the saving cutoffs of the solved model.
    Cutoffs(Common),
    /// Monte Carlo agents following the optimal rule.
    Simulate(Common),
    /// Value of a second payment and the correlation sweep.
    TwoPayment(Common),
    /// Compare accurate and misperceiving agents on a lattice.
    Procrastinate(Common),
    /// Run the property checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides `out`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated property ids (overrides `verify.properties`).
    #[arg(long, value_delimiter = ',')]
    properties: Option<Vec<String>>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (name, common, properties) = match cli.command {
        Command::Solve(c) => ("solve", c, None),
        Command::Cutoffs(c) => ("cutoffs", c, None),
        Command::Simulate(c) => ("simulate", c, None),
        Command::TwoPayment(c) => ("two-payment", c, None),
        Command::Procrastinate(c) => ("procrastinate", c, None),
        Command::Verify(v) => ("verify", v.common, v.properties),
    };

    if let Some(threads) = common.threads {
        if threads == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }

    let overrides = Overrides { out: common.out, seed: common.seed, properties };
    let job = match config::load(&common.config, &overrides).and_then(|c| Job::prepare(name, c)) {
        Ok(job) => job,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match job.run() {
        Ok(Outcome::Passed) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
