use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use kp_cli::commands::{self, Command};
use kp_cli::config::ExperimentConfig;
use kp_cli::error::{CliError, CliResult};
use kp_cli::report::write_outputs;
use log::{error, info};

#[derive(Debug, Parser)]
#[command(name = "kp", version, about = "Gradient-perturbed stable kernels: series, conditions, bounds and scans")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Reserved.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(args: &Args) -> CliResult<bool> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let cfg = ExperimentConfig::load(&args.config)?;
    let started = Instant::now();
    let (report, tables) = commands::run(args.command, &cfg)?;
    let elapsed = started.elapsed();
    let dir = args.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let stem = cfg.output.name.clone().unwrap_or_else(|| args.command.name().to_string());
    let written = write_outputs(&dir, &stem, &report, &tables, elapsed)?;
    info!("wrote {} files to {} in {:.2} s", written.len(), dir.display(), elapsed.as_secs_f64());
    print!("{}", report.summary());
    Ok(report.passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KP_LOG", "error")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            eprintln!("kp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
