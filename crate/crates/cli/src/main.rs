//! `sos-lab`: experiment orchestration for the solid-on-solid interface
//! laboratory.
//!
//! Exit codes: 0 success, 1 configuration/validation error, 2 numerical
//! failure, 3 I/O error.

mod commands;
mod config;
mod report;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sos-lab",
    about = "Sampling, coarse-graining, and Gaussian-limit verification for the continuous solid-on-solid model",
    version
)]
struct Cli {
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the chain seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (must exist).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Worker threads; falls back to SOS_LAB_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Overrides the solver relative-residual tolerance.
    #[arg(long, global = true)]
    tolerance: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw (phi, tau) samples and write binary snapshots plus a manifest.
    Sample,
    /// Coarse-grained energies, effective matrices, and corrector profile.
    EstimateAhom {
        /// Reuse tau snapshots from a `sample` run instead of sampling.
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
    /// Cluster statistics: tails, inverse moments, good-cube fractions.
    Percolation {
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
    /// Three-route variance comparison and moment structure.
    Clt,
    /// Oracle-vs-main-path verification ledger.
    OracleCheck,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.chain.seed = seed;
    }
    if let Some(tol) = cli.tolerance {
        if tol <= 0.0 {
            anyhow::bail!("tolerance must be positive");
        }
        config.solver.tolerance = tol;
    }
    config.validate()?;
    sos_lab::elliptic::set_solver_tolerance(config.solver.tolerance);

    let threads = cli.threads.or_else(|| {
        std::env::var("SOS_LAB_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;

    match &cli.command {
        Command::Sample => commands::cmd_sample(&config, &cli.out),
        Command::EstimateAhom { snapshots } => {
            commands::cmd_estimate_ahom(&config, &cli.out, snapshots.as_deref())
        }
        Command::Percolation { snapshots } => {
            commands::cmd_percolation(&config, &cli.out, snapshots.as_deref())
        }
        Command::Clt => commands::cmd_clt(&config, &cli.out),
        Command::OracleCheck => commands::cmd_oracle_check(&config, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            // map error classes onto the documented exit codes
            let code = if let Some(core) = err.downcast_ref::<sos_lab::Error>() {
                match core {
                    sos_lab::Error::Config(_) | sos_lab::Error::Domain(_) => 1u8,
                    sos_lab::Error::Io(_) | sos_lab::Error::Snapshot(_) => 3,
                    _ => 2,
                }
            } else if err.downcast_ref::<std::io::Error>().is_some() {
                3
            } else {
                let text = format!("{err}");
                if text.contains("config")
                    || text.contains("must be")
                    || text.contains("directory")
                    || text.contains("parse")
                {
                    1
                } else {
                    2
                }
            };
            ExitCode::from(code)
        }
    }
}
