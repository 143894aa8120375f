use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use rogat_lab::{run_command, Command, ExperimentConfig};

/// Runs graph-attention robustness experiments and writes `runs.csv` and
/// `summary.json` under `<output>/<command>/`.
#[derive(Parser, Debug)]
#[command(name = "rogat-lab", version)]
struct Cli {
    /// ratio-experiment, defense-sweep, ablation, hyper-sweep, ratio-track,
    /// train or attack.
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override applied after the file, e.g. `--set rogat.alpha=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let report = run_command(cli.command, &cfg)?;
    let dir = cfg.output.join(cli.command.name());
    report.write(&dir)?;
    if !report.cells.is_empty() {
        print!("{}", report.table());
    }
    println!("wrote {}", dir.display());
    Ok(report.complete)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some cells did not complete");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
