//! `subnet`: generate data, train with random subnetwork masks, sweep
//! parameters, run the moment checks and dump kernels.
//!
//! Exit codes: 0 success, 1 invalid input, 2 training diverged, 3 I/O failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Divergence(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Divergence(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Divergence(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<subnet_core::Error> for CliError {
    fn from(e: subnet_core::Error) -> Self {
        match e {
            subnet_core::Error::Divergence { .. } => CliError::Divergence(e.to_string()),
            subnet_core::Error::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "subnet", version, about = "Randomly masked subnetwork training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Finite,
    Masked,
    Infinite,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset of unit-norm rows as CSV.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        label_bound: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a JSON config; writes trace.csv, summary.json, manifest.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// CSV dataset overriding the config's dataset source.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Rescale CSV rows to unit norm instead of rejecting them.
        #[arg(long)]
        normalize: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Validate the config and dataset, write nothing.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run a parameter grid; writes sweep.csv, sweep.json, manifest.json.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        normalize: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run identity and moment checks, one JSON report per line.
    Verify {
        /// Comma-separated subset of checks.
        #[arg(long, value_delimiter = ',')]
        checks: Option<Vec<String>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        xi: f64,
        #[arg(long, default_value_t = 1)]
        p: usize,
        /// Initialization scale for the bound and initial-loss checks.
        #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
        kappa: f64,
    },
    /// Compute a kernel matrix; writes kernel.csv and kernel.json.
    Ntk {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        normalize: bool,
        #[arg(long, default_value_t = 1024)]
        m: usize,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 1.0)]
        xi: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Selection probability of the mask row (masked kind only).
        #[arg(long)]
        mask_xi: Option<f64>,
        #[arg(long)]
        mask_seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("SUBNET_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Validation(format!("SUBNET_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Validation(format!("could not size the thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::GenData {
            n,
            d,
            label_bound,
            seed,
            out,
        } => commands::gen_data(n, d, label_bound, seed, &out),
        Command::Train {
            config,
            data,
            normalize,
            out_dir,
            dry_run,
        } => commands::train(&config, data.as_deref(), normalize, &out_dir, dry_run),
        Command::Sweep {
            spec,
            data,
            normalize,
            out_dir,
        } => commands::sweep(&spec, data.as_deref(), normalize, &out_dir),
        Command::Verify {
            checks,
            seed,
            xi,
            p,
            kappa,
        } => commands::verify(checks, seed, xi, p, kappa),
        Command::Ntk {
            kind,
            data,
            normalize,
            m,
            kappa,
            xi,
            seed,
            mask_xi,
            mask_seed,
            out_dir,
        } => commands::ntk(commands::NtkArgs {
            kind,
            data,
            normalize,
            m,
            kappa,
            xi,
            seed,
            mask_xi,
            mask_seed,
            out_dir,
        }),
    }
}

fn main() -> ExitCode {
    // clap's default usage-error status (2) would collide with divergence
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
