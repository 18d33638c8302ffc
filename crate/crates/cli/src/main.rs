use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use fedpoison_cli::{
    parse_config, parse_oracle, pool, run_config, run_oracle, run_sweep, write_reports, write_sweep, ConfigFile,
};
use fedpoison_core::ExperimentConfig;

#[derive(Parser)]
#[command(name = "fedpoison", version, about = "Model poisoning experiments for federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the number of trials.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Runs one experiment and writes report.json, rounds.csv and timing.json.
    Run { config: PathBuf },
    /// Runs every cell of a sweep and writes summary.csv plus per-cell reports.
    Sweep { config: PathBuf },
    /// Checks Krum and the benign score `E` against brute force.
    Oracle { config: PathBuf },
}

impl Cli {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(trials) = self.trials {
            config.trials = trials;
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let workers = pool(cli.threads)?;
    match &cli.command {
        Command::Run { config } => {
            let ConfigFile::Experiment(mut cfg) = parse_config(config)? else {
                bail!("{}: holds a sweep; use `fedpoison sweep`", config.display());
            };
            cli.apply(&mut cfg);
            let report = workers.install(|| run_config(&cfg))?;
            write_reports(&cli.out, &report)?;
            log::info!("wrote {}", cli.out.display());
        }
        Command::Sweep { config } => {
            let ConfigFile::Sweep(mut spec) = parse_config(config)? else {
                bail!("{}: has no `base`; use `fedpoison run`", config.display());
            };
            cli.apply(&mut spec.base);
            let cells = workers.install(|| run_sweep(&spec))?;
            write_sweep(&cli.out, &spec, &cells)?;
            log::info!("wrote {} cells to {}", cells.len(), cli.out.display());
        }
        Command::Oracle { config } => {
            let mut spec = parse_oracle(config)?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            if !run_oracle(&spec, &mut io::stdout().lock())? {
                bail!("oracle mismatch");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
