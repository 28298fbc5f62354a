//! `incdiss`: run an incremental dissipativity analysis from a JSON config.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::AnalysisConfig;
use run::{run, RunArgs};

#[derive(Debug, Parser)]
#[command(
    name = "incdiss",
    version,
    about = "Incremental dissipativity analysis"
)]
struct Cli {
    /// JSON analysis configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory for certificate.json, trajectory.csv and summary.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// RNG seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Do not print the summary.
    #[arg(long)]
    quiet: bool,
}

const USAGE_ERROR: u8 = 1;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(USAGE_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cfg = match AnalysisConfig::load(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(USAGE_ERROR);
        }
    };
    let args = RunArgs {
        out_dir: &cli.out,
        seed: cli.seed.unwrap_or(cfg.seed),
        quiet: cli.quiet,
    };
    match run(&cfg, &args) {
        Ok(status) => ExitCode::from(status.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(USAGE_ERROR)
        }
    }
}
