//! Command-line orchestration: config parsing, table caching and the CSV/JSON
//! artifacts consumed by the plotting scripts.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 cache error.

pub mod cache;
pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::error::Error;
use cache::Cache;
use commands::Context;
use config::ExperimentConfig;
use output::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "muxsource", version, about = "Multiplexed heralded single-photon source simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the master seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the output directory of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, env = "MUXSOURCE_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Storage-ring spectra and signal filter response.
    Spectra(CommonArgs),
    /// Build and cache the pumped-bin outcome tables.
    PumpTable(CommonArgs),
    /// Compare quantum-jump averages with the density-matrix oracle.
    VerifyDynamics(CommonArgs),
    /// Optimise protocols from cached tables.
    Optimize(CommonArgs),
    /// Efficiency, threshold and loss sweeps.
    Sweep(CommonArgs),
    /// Assemble the CSV bundle of one figure, or of all of them.
    Figures {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["3", "4", "6", "7", "8", "9"]))]
        figure: Option<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectra(_) => "spectra",
            Command::PumpTable(_) => "pump-table",
            Command::VerifyDynamics(_) => "verify-dynamics",
            Command::Optimize(_) => "optimize",
            Command::Sweep(_) => "sweep",
            Command::Figures { .. } => "figures",
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            Command::Spectra(c)
            | Command::PumpTable(c)
            | Command::VerifyDynamics(c)
            | Command::Optimize(c)
            | Command::Sweep(c) => c,
            Command::Figures { common, .. } => common,
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParameter(_) => 1,
        Error::Cache(_) | Error::Io(_) | Error::Json(_) => 3,
        _ => 2,
    }
}

/// Resolve the config and flags into a run context.
pub fn context(args: &CommonArgs) -> Result<Context, Error> {
    let mut config = ExperimentConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    if let Some(jobs) = args.jobs {
        config.run.jobs = jobs;
    }
    let out_dir = args.out.clone().unwrap_or_else(|| config.run.output_dir.clone());
    let cache_dir = args.cache_dir.clone().unwrap_or_else(|| out_dir.join("cache"));
    Ok(Context::new(config, out_dir, Cache::new(cache_dir)))
}

/// Run one subcommand and write its manifest. Returns the manifest.
pub fn execute(command: &Command) -> Result<RunManifest, Error> {
    let ctx = context(command.common())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.config.run.jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let start = Instant::now();
    let artifacts = pool.install(|| match command {
        Command::Spectra(_) => commands::spectra(&ctx),
        Command::PumpTable(_) => commands::pump_table(&ctx),
        Command::VerifyDynamics(_) => {
            let v = commands::verify_dynamics(&ctx)?;
            if !v.passed {
                log::error!("unraveling equivalence failed; see verify-dynamics/unraveling.csv");
            }
            Ok(v.artifacts)
        }
        Command::Optimize(_) => commands::optimize_command(&ctx),
        Command::Sweep(_) => commands::sweep(&ctx),
        Command::Figures { figure, .. } => {
            let which: Vec<u8> = match figure {
                Some(f) => vec![f.parse().expect("validated by clap")],
                None => commands::FIGURES.to_vec(),
            };
            commands::figures(&ctx, &which)
        }
    })?;
    let manifest = RunManifest::new(
        command.name(),
        &ctx.config.content_hash(),
        ctx.config.run.seed,
        artifacts,
        start.elapsed(),
    );
    manifest.write(&ctx.out_dir)?;
    Ok(manifest)
}

/// Parse arguments, run, report errors on stderr and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(m) => {
            for a in &m.artifacts {
                println!("{}", a.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
