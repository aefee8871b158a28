use std::fs;
use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand, ValueEnum};
use secfu_cli::{parse_config_with, run, Overrides, RunMode};

/// Plan, simulate and validate clustered federated unlearning.
///
/// Exit status: 0 success, 1 internal or usage error, 2 infeasible
/// parameters, 3 capacity guard violation.
#[derive(Debug, Parser)]
#[command(name = "secfu", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Derive cluster size, threshold and unlearning capacities.
    Pargen(Common),
    /// Run an unlearning request stream and one audited aggregation round per cluster.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "seq")]
        mode: Mode,
    },
    /// Estimate requirement failure rates.
    Montecarlo(Common),
    /// Sweep planning parameters around the configured point.
    Sweep(Common),
    /// Train the synthetic federation and optionally unlearn users.
    Train(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo trials; overrides `trials` in the config.
    #[arg(long)]
    trials: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Seq,
    Bat,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            process::exit(code);
        }
    };
    let (common, mode) = match cli.command {
        Command::Pargen(c) => (c, RunMode::Pargen),
        Command::Simulate { common, mode: Mode::Seq } => (common, RunMode::SimulateSeq),
        Command::Simulate { common, mode: Mode::Bat } => (common, RunMode::SimulateBat),
        Command::Montecarlo(c) => (c, RunMode::MonteCarlo),
        Command::Sweep(c) => (c, RunMode::Sweep),
        Command::Train(c) => (c, RunMode::Train),
    };
    let text = match fs::read_to_string(&common.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", common.config.display());
            process::exit(1);
        }
    };
    let overrides = Overrides { mode: Some(mode), seed: common.seed, trials: common.trials, out: common.out };
    let config = match parse_config_with(&text, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            process::exit(1);
        }
    };
    let outcome = run(&config);
    println!("{}", outcome.summary);
    process::exit(outcome.exit.code());
}
