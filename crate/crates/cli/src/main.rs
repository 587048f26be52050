//! seva: severity-aware dysarthric speech recognition experiment driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use clap::Parser;
use seva_cli::config::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "seva",
    about = "Severity-aware dysarthric speech recognition toolkit",
    version
)]
struct Cli {
    /// Pipeline stage to run: gen-corpus, extract, train-embedder, train-am,
    /// sat, adapt, train-seq, decode, rescore, score, or ablate.
    subcommand: String,

    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output / run directory.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,

    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides the config worker count.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log_level = std::env::var("SEVA_LOG").unwrap_or_else(|_| "info".to_string());

    if !seva_cli::SUBCOMMANDS.contains(&cli.subcommand.as_str()) {
        eprintln!(
            "error: unknown subcommand {:?} (expected one of {})",
            cli.subcommand,
            seva_cli::SUBCOMMANDS.join(", ")
        );
        return ExitCode::from(1);
    }

    let mut cfg = match &cli.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(1);
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }

    if log_level != "quiet" {
        eprintln!(
            "seva {} → {} (seed {}, {} workers)",
            cli.subcommand,
            cli.out.display(),
            cfg.seed,
            cfg.workers.max(1)
        );
    }
    match seva_cli::run(&cli.subcommand, &cfg, &cli.out) {
        Ok(()) => {
            if log_level != "quiet" {
                eprintln!("seva {}: done", cli.subcommand);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            // Numeric failures (non-finite losses) exit 3, data errors 2.
            let msg = format!("{e:#}");
            if msg.contains("non-finite") {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
