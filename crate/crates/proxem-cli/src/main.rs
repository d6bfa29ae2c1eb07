use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use proxem_cli::config::{Overrides, Preset};

/// Proxy-space error-mitigation experiments on bosonic logical qubits.
#[derive(Parser)]
#[command(name = "proxem", version)]
struct Cli {
    /// Experiment configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Disorder sample count override.
    #[arg(long)]
    samples: Option<usize>,
    /// Scale preset: paper (1000 samples, 20-point sweeps) or desk (200
    /// samples, 6-point sweeps). Omitting the flag keeps the paper-scale
    /// defaults.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        samples: cli.samples,
        preset: cli.preset,
    };
    match proxem_cli::run_from_files(&cli.config, &overrides, &cli.out) {
        Ok(status) => ExitCode::from(status.exit_code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
