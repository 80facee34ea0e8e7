//! `lls` — batch runner for local iterative block-diagonalization
//! experiments: configure, run, scan couplings, re-verify persisted
//! artifacts, and answer rectangle-counting questions.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod artifacts;
mod config;

use artifacts::ConfigError;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "lls")]
#[command(about = "finite-lattice block-diagonalization experiments")]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and verify it.
    Run {
        /// Path to the TOML config.
        #[arg(long)]
        config: PathBuf,

        /// Output directory (overrides output.directory).
        #[arg(long)]
        out: Option<PathBuf>,

        /// Coupling override.
        #[arg(long)]
        t: Option<f64>,

        /// Seed override for the randomized form-bound vectors.
        #[arg(long)]
        seed: Option<u64>,

        /// Dump oracle spectra and full tables.
        #[arg(long)]
        debug_dump: bool,
    },

    /// Run the whole coupling grid and report the passing frontier.
    Scan {
        #[arg(long)]
        config: PathBuf,

        #[arg(long)]
        out: Option<PathBuf>,

        #[arg(long)]
        seed: Option<u64>,
    },

    /// Re-check persisted artifacts without re-running the step loop.
    Verify {
        /// Artifact directory of a previous `run` with keep_tables.
        #[arg(long)]
        out: PathBuf,
    },

    /// Rectangle counting and ordering utilities.
    Geometry {
        /// Spatial dimension.
        #[arg(long)]
        d: usize,

        /// Circumference class.
        #[arg(long)]
        l: usize,

        /// Count rectangle shapes (translation classes) at circumference l.
        #[arg(long)]
        shapes: bool,

        /// Count placed rectangles at circumference l on an N-side lattice.
        #[arg(long)]
        n: Option<usize>,
    },

    /// Print the documented config schema (TOML) to stdout.
    DumpConfigSchema,
}

fn load_config(path: &PathBuf) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_toml(&text).map_err(|e| ConfigError(e).into())
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Run {
            config,
            out,
            t,
            seed,
            debug_dump,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(t) = t {
                cfg.t = Some(t);
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if debug_dump {
                cfg.output.debug_dump = true;
            }
            let dir = artifacts::resolve_out_dir(&cfg, out.as_deref());
            artifacts::run_experiment(&cfg, &dir)
        }
        Command::Scan { config, out, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let dir = artifacts::resolve_out_dir(&cfg, out.as_deref());
            artifacts::scan_experiment(&cfg, &dir)
        }
        Command::Verify { out } => artifacts::verify_artifacts(&out),
        Command::Geometry { d, l, shapes, n } => {
            if shapes {
                println!("{}", artifacts::count_shapes(d, l)?);
            }
            if let Some(n) = n {
                let lattice = lls_core::lattice::LatticeSpec::new(d, n)
                    .map_err(|e| ConfigError(e.into()))?;
                let count = lls_core::lattice::enumerate_rectangles(
                    &lattice,
                    Some(&|r: &lls_core::lattice::Rectangle| r.circumference() == l),
                )
                .len();
                println!("{count}");
            }
            if !shapes && n.is_none() {
                return Err(ConfigError(anyhow::anyhow!(
                    "geometry needs --shapes and/or --n N"
                ))
                .into());
            }
            Ok(0)
        }
        Command::DumpConfigSchema => {
            print!("{}", config::CONFIG_SCHEMA);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
