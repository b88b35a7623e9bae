use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stokes_homog::config::{ExperimentConfig, LoadError};
use stokes_homog::error::Error;
use stokes_homog::runner;

const EXIT_VALIDATION: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

/// Periodic homogenization experiments for Stokes systems.
#[derive(Debug, Parser)]
#[command(name = "stokes-homog", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweeps; defaults to all cores.
    #[arg(long, global = true, env = "STOKES_HOMOG_THREADS")]
    threads: Option<usize>,

    /// Seed for randomised steps (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and print one PASS/FAIL line per enabled check.
    Run { config: PathBuf },
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, ExitCode> {
    match ExperimentConfig::load(path) {
        Ok(mut cfg) => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            Ok(cfg)
        }
        Err(LoadError::Io(e)) => {
            eprintln!("error: {e}");
            Err(ExitCode::from(EXIT_VALIDATION))
        }
        Err(LoadError::Invalid(diags)) => {
            for d in &diags {
                eprintln!("{}: {d}", path.display());
            }
            Err(ExitCode::from(EXIT_VALIDATION))
        }
    }
}

fn run(cli: &Cli, path: &Path) -> ExitCode {
    let cfg = match load(path, cli.seed) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.out.clone());
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(EXIT_SOLVER);
        }
    };
    let outcome = pool.install(|| runner::run(&cfg, path.parent(), &out));
    match outcome {
        Ok(outcome) => {
            for c in &outcome.checks {
                println!("{}", c.line());
            }
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                let failed: Vec<&str> = outcome.checks.iter().filter(|c| !c.pass).map(|c| c.id.name()).collect();
                eprintln!("acceptance failed: {}", failed.join(", "));
                ExitCode::from(EXIT_ACCEPTANCE)
            }
        }
        Err(Error::Config { path: field, message }) => {
            eprintln!("{}: {field}: {message}", path.display());
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(e) => {
            eprintln!("error: {} experiment failed: {e}", cfg.kind.name());
            ExitCode::from(EXIT_SOLVER)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match &cli.command {
        Command::Run { config } => run(&cli, config),
        Command::Validate { config } => match load(config, cli.seed) {
            Ok(_) => {
                println!("{}: valid", config.display());
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
    }
}
