use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmrate::checks::{all_passed, oracle_check, selftest, CheckOutcome};
use dmrate::{emit, run_scan_with_jobs, Format, ScanConfig, ScanOptions};

const EXIT_CONFIG: u8 = 1;
const EXIT_FAILURE: u8 = 2;

#[derive(Parser)]
#[command(name = "dmrate", version, about = "Key-rate lower bounds for QPSK continuous-variable QKD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every point of a scan configuration.
    Scan {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (default: all logical cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output file; overrides the config, defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Record per-point wall time (output is then no longer byte-reproducible).
        #[arg(long)]
        timing: bool,
        /// Re-solve each point with the cutoff raised by two and flag unstable rates.
        #[arg(long)]
        cutoff_check: bool,
    },
    /// Compare closed-form detector operators with phase-space integrals.
    OracleCheck {
        #[arg(long, default_value_t = 50)]
        n_samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Check the ideal-detector and zero-radius limits.
    Selftest,
}

fn report(outcomes: &[CheckOutcome]) -> ExitCode {
    for o in outcomes {
        println!("{}", o.line());
    }
    if all_passed(outcomes) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILURE)
    }
}

fn scan(config: PathBuf, jobs: Option<usize>, out: Option<PathBuf>, format: Format, opts: ScanOptions) -> ExitCode {
    let cfg = match ScanConfig::from_path(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if jobs == Some(0) {
        eprintln!("--jobs must be positive");
        return ExitCode::from(EXIT_CONFIG);
    }
    let rows = match run_scan_with_jobs(&cfg, &opts, jobs) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("cannot start worker pool: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    let written = match out.or(cfg.output.clone()) {
        Some(path) => File::create(&path)
            .map_err(|e| format!("{}: {e}", path.display()))
            .and_then(|f| {
                let mut w = BufWriter::new(f);
                emit(&rows, format, &mut w).map_err(|e| e.to_string())?;
                w.flush().map_err(|e| e.to_string())
            }),
        None => emit(&rows, format, io::stdout().lock()).map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        eprintln!("cannot write output: {e}");
        return ExitCode::from(EXIT_FAILURE);
    }
    let failed = rows.iter().filter(|r| r.status.is_failure()).count();
    if failed > 0 {
        eprintln!("{failed} of {} grid points failed (not converged, cutoff-unstable or errored)", cfg.grid_size());
        return ExitCode::from(EXIT_FAILURE);
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Scan { config, jobs, out, format, timing, cutoff_check } => {
            scan(config, jobs, out, format, ScanOptions { timing, cutoff_check })
        }
        Command::OracleCheck { n_samples, seed } => report(&oracle_check(n_samples, seed)),
        Command::Selftest => report(&selftest()),
    }
}
