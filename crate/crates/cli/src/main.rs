//! `comorbscan`: comorbidity profiles from longitudinal claims data.
//!
//! Exit codes: 0 success, 2 configuration or usage error (bad flags, bad
//! config file, missing inputs, rejected generator spec), 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use comorbscan::config::RunConfig;
use comorbscan::pipeline;

#[derive(Parser)]
#[command(name = "comorbscan", version, about = "Age- and gender-resolved comorbidity profiling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic claims population from a spec file
    Generate {
        /// Generator spec (TOML)
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for the CSVs, manifest, and demographics
        #[arg(long)]
        out: PathBuf,
        /// Override the seed in the spec
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        threads: ThreadArgs,
    },
    /// Scan for comorbidities and export the per-cohort profiles
    Scan(RunArgs),
    /// Run the temporal lead/lag surrogate test
    Leadlag(RunArgs),
    /// Scan plus lead/lag in one run
    All(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured significance level
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    threads: ThreadArgs,
}

#[derive(Args)]
struct ThreadArgs {
    /// Worker threads; defaults to one per core
    #[arg(long)]
    threads: Option<usize>,
}

fn init_threads(args: &ThreadArgs) -> comorbscan::Result<()> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| comorbscan::Error::Config(format!("--threads: {e}")))?;
    }
    Ok(())
}

fn with_config(
    args: RunArgs,
    run: fn(&RunConfig, &Path) -> comorbscan::Result<()>,
) -> comorbscan::Result<()> {
    init_threads(&args.threads)?;
    let mut config = RunConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = Some(seed);
    }
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
    }
    let out = pipeline::resolve_out_dir(&config, args.out)?;
    run(&config, &out)
}

fn run(cli: Cli) -> comorbscan::Result<()> {
    match cli.command {
        Command::Generate {
            spec,
            out,
            seed,
            threads,
        } => {
            init_threads(&threads)?;
            pipeline::run_generate(&spec, &out, seed)
        }
        Command::Scan(args) => with_config(args, pipeline::run_scan_command),
        Command::Leadlag(args) => with_config(args, pipeline::run_leadlag_command),
        Command::All(args) => with_config(args, pipeline::run_all),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
