//! Command-line front end: clustering of count profiles with simultaneous
//! dimension reduction, plus ingestion, model-size selection, synthetic
//! benchmarking, and report generation.

mod commands;
mod manifest;
mod resolver;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;

use nmfem::{Error, Result};

use commands::Context;
use resolver::{parse_config_file, Resolver};

#[derive(Debug, Parser)]
#[command(
    name = "nmfem",
    version,
    about = "Cluster event-count profiles with a factored multinomial mixture",
    long_about = "Clusters individuals by their event-count profiles using a mixture of \
                  multinomials whose component profiles are mixtures of a small shared \
                  dictionary, so the clusters stay interpretable. Ships the data-prep, \
                  model-size selection, benchmarking, and reporting around that fit."
)]
struct Cli {
    /// Flat key=value file supplying defaults for any long flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root random seed; all randomness derives from it deterministically.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for restarts and replications (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Subcommand)]
enum Command {
    /// Build per-card weekly activity profiles from a validation-event CSV.
    Ingest(commands::ingest::IngestArgs),
    /// Fit the factored mixture for one (K, H) size.
    Fit(commands::fit::FitArgs),
    /// Fit a range of sizes and pick one by AIC, BIC, and the slope heuristic.
    Sweep(commands::sweep::SweepArgs),
    /// Compare nmf-em, plain EM, and k-means on synthetic mixtures.
    Bench(commands::bench::BenchArgs),
    /// Summarize a fitted model: words, clusters, and hard assignments.
    Report(commands::report::ReportArgs),
}

/// Exit codes: 0 success, 1 usage, 2 unusable input, 3 ran but did not
/// converge, 4 numerical failure, 5 not enough data for the request.
fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) => 1,
        Error::EmptyInput(_)
        | Error::TooManyBadRows { .. }
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => 2,
        Error::NumericalFailure { .. }
        | Error::AllRestartsFailed { .. }
        | Error::DegenerateObservation { .. }
        | Error::DimensionMismatch { .. } => 4,
        Error::InsufficientData { .. } => 5,
    }
}

fn run(cli: Cli) -> Result<i32> {
    let started = Instant::now();
    let config = match &cli.config {
        Some(path) => parse_config_file(path)?,
        None => BTreeMap::new(),
    };
    let resolver = Resolver::new(config);
    if let Some(threads) = resolver.optional("threads", cli.threads)? {
        nmfem::configure_threads(threads)?;
    }
    let seed = resolver.get("seed", cli.seed, 0)?;
    let ctx = Context {
        resolver,
        seed,
        started,
    };
    match &cli.command {
        Command::Ingest(args) => commands::ingest::run(args, &ctx),
        Command::Fit(args) => commands::fit::run(args, &ctx),
        Command::Sweep(args) => commands::sweep::run(args, &ctx),
        Command::Bench(args) => commands::bench::run(args, &ctx),
        Command::Report(args) => commands::report::run(args, &ctx),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let is_display = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            std::process::exit(if is_display { 0 } else { 1 });
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code_for(&e));
        }
    }
}
