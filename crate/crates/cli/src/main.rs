mod commands;
mod config;
mod truth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Command, ConfigError, Experiment};

#[derive(Parser)]
#[command(name = "madprops", version, about = "Multiproposal MCMC experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the experiment file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run replicate chains and summarize them.
    Run(Common),
    /// Evaluate a grid over p and/or the proposal scale.
    Sweep(Common),
    /// Adapt the proposal scale to target acceptance rates.
    Tune(Common),
    /// Distance to a limit law as p grows, with its log-log slope.
    Limitcheck(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Run(a) => (Command::Run, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Tune(a) => (Command::Tune, a),
        Cmd::Limitcheck(a) => (Command::Limitcheck, a),
    };
    let exp = match Experiment::load(&args.config, cmd, args.seed) {
        Ok(e) => e,
        Err(ConfigError(msg)) => {
            eprintln!("config error: {msg}");
            return ExitCode::from(2);
        }
    };
    if args.workers == Some(0) {
        eprintln!("config error: --workers must be at least 1");
        return ExitCode::from(2);
    }
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.unwrap_or(0))
        .build()
        .map_err(anyhow::Error::from)
        .and_then(|pool| pool.install(|| commands::execute(cmd, &exp, &args.out)));
    match result {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
