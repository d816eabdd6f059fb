//! `mixedpo` experiment runner.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Failure;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "mixedpo",
    version,
    about = "Mixed H2/H-infinity policy optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the H-infinity norm of a gain by bisection and by frequency grid.
    Hinf(RunArgs),
    /// Report feasible-set membership of a gain as JSON.
    Membership(RunArgs),
    /// Run PG, NPG or Gauss-Newton and write a CSV trace plus a JSON summary.
    Optimize(RunArgs),
    /// Solve the induced zero-sum game and compare with the mixed-design optimum.
    Game(RunArgs),
    /// Run the model-free nested natural-gradient loop on the induced game.
    Modelfree(RunArgs),
    /// List the built-in cases.
    CaseList,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (CSV trace for `optimize`, JSON otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured number of trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Record the H-infinity norm every N iterations (0 disables it).
    #[arg(long)]
    hinf_every: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = ExperimentConfig::from_path(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            if trials == 0 {
                return Err(config::ConfigError("--trials must be positive".into()).into());
            }
            cfg.trials = trials;
        }
        if let Some(n) = self.hinf_every {
            cfg.algorithm.hinf_every = n;
        }
        Ok(cfg)
    }
}

type Handler = fn(&ExperimentConfig, Option<&std::path::Path>) -> commands::CmdResult;

fn run(cli: Cli) -> Result<(), Failure> {
    let (args, f): (&RunArgs, Handler) = match &cli.command {
        Command::CaseList => return commands::case_list(),
        Command::Hinf(a) => (a, commands::hinf),
        Command::Membership(a) => (a, commands::membership_cmd),
        Command::Optimize(a) => (a, commands::optimize),
        Command::Game(a) => (a, commands::game),
        Command::Modelfree(a) => (a, commands::modelfree),
    };
    let cfg = args.load()?;
    f(&cfg, args.out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                commands::EXIT_CONFIG
            } else {
                0
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
