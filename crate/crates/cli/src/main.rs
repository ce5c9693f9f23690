//! `crosslayer` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crosslayer::harness::{self, CommandError, Overrides};

#[derive(Parser)]
#[command(name = "crosslayer", version, about = "Cross-layer soft-error resilience experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Accuracy of one configuration under fault injection.
    Run(Common),
    /// Greedy configuration selection under an accuracy-loss threshold.
    Select(Common),
    /// Selection over the threshold x error-rate grid.
    Sweep(Common),
    /// Modeled completion times of BASELINE, HaRE and the cross-layer configuration.
    Perf(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trials per evaluation (overrides `fault.trials`).
    #[arg(long, conflicts_with = "fast")]
    trials: Option<usize>,
    /// Master seed (overrides `fault.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Use 200 trials.
    #[arg(long)]
    fast: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (common, command): (&Common, fn(&_) -> Result<_, CommandError>) = match &cli.command {
        Command::Run(c) => (c, harness::cmd_run),
        Command::Select(c) => (c, harness::cmd_select),
        Command::Sweep(c) => (c, harness::cmd_sweep),
        Command::Perf(c) => (c, harness::cmd_perf),
    };
    let overrides = Overrides { out: common.out.clone(), trials: common.trials, seed: common.seed, fast: common.fast };
    let result = harness::load_config(&common.config, &overrides).and_then(|config| command(&config));
    match result {
        Ok(artifacts) => {
            for path in artifacts {
                log::info!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("crosslayer: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
