use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "qfreg",
    version,
    about = "Scalar-on-quantile-function regression for count outcomes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate exposure worlds and counts for a scenario.
    Simulate(Common),
    /// Fit stage-1 quantile functions to individual exposures.
    FitQuantile(Common),
    /// Fit the negative binomial health model.
    FitHealth(Common),
    /// Run a simulation study and write the metrics table.
    Study(Common),
    /// Recompute effect summaries and WAIC from a saved health chain.
    Effects(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Force the desk-scale scenario size (n = 200, 20 replicates).
    #[arg(long)]
    desk_scale: bool,
}

fn exit_code(e: &qfreg::Error) -> u8 {
    use qfreg::Error::*;
    match e {
        Config(_) | InvalidArgument(_) | Domain { .. } => 2,
        Validation(_) | Csv(_) | Json(_) | OutOfSupport(_) => 3,
        Numerical(_) => 4,
        Io { .. } => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&config::Resolved) -> qfreg::Result<()>) = match &cli.command {
        Command::Simulate(c) => (c, commands::simulate),
        Command::FitQuantile(c) => (c, commands::fit_quantile),
        Command::FitHealth(c) => (c, commands::fit_health),
        Command::Study(c) => (c, commands::study),
        Command::Effects(c) => (c, commands::effects),
    };
    let result = RunConfig::load(common.config.as_deref())
        .and_then(|cfg| cfg.resolve(common.seed, common.out.clone(), common.desk_scale))
        .and_then(|r| run(&r));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
