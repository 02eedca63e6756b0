//! The five subcommands. Each resolves its settings, does the work through
//! the library, writes its output files plus a run manifest into `--out`,
//! and returns the process exit code.

pub mod bench;
pub mod fit;
pub mod ingest;
pub mod report;
pub mod sweep;

use std::io;
use std::path::Path;
use std::time::Instant;

use flate2::read::GzDecoder;

use nmfem::{FitConfig, Result};

use crate::resolver::Resolver;

/// Per-invocation state shared by every command: the settings resolver,
/// the root seed, and the start time for the manifest's wall clock.
pub struct Context {
    pub resolver: Resolver,
    pub seed: u64,
    pub started: Instant,
}

/// Open an input file, transparently decompressing when the name ends
/// in `.gz`.
pub fn open_input(path: &Path) -> Result<Box<dyn io::Read>> {
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(file)))
    } else {
        Ok(Box::new(io::BufReader::new(file)))
    }
}

/// Create `dir/name` and hand a buffered writer to `write`.
pub fn write_file<F>(dir: &Path, name: &str, write: F) -> Result<()>
where
    F: FnOnce(&mut io::BufWriter<std::fs::File>) -> Result<()>,
{
    let file = std::fs::File::create(dir.join(name))?;
    let mut out = io::BufWriter::new(file);
    write(&mut out)?;
    io::Write::flush(&mut out)?;
    Ok(())
}

/// EM tuning flags shared by `fit`, `sweep`, and `bench`. All optional;
/// each command supplies its own defaults.
#[derive(Debug, clap::Args)]
pub struct FitOpts {
    /// Log-likelihood change that stops the outer EM loop.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Divergence change that stops the inner factor updates.
    #[arg(long)]
    pub epsilon_inner: Option<f64>,
    /// Cap on outer EM iterations per restart.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Cap on inner multiplicative updates per outer iteration.
    #[arg(long)]
    pub max_inner: Option<usize>,
    /// Independent random restarts; the best final log-likelihood wins.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Smallest factor entry kept after each update; 0 freezes exact zeros.
    #[arg(long)]
    pub zero_floor: Option<f64>,
}

/// Resolve the EM configuration from flags, config file, and the given
/// defaults, in that precedence order.
pub fn resolve_fit_config(
    ctx: &Context,
    opts: &FitOpts,
    defaults: &FitConfig,
) -> Result<FitConfig> {
    let cfg = FitConfig {
        epsilon_outer: ctx
            .resolver
            .get("epsilon", opts.epsilon, defaults.epsilon_outer)?,
        epsilon_inner: ctx
            .resolver
            .get("epsilon-inner", opts.epsilon_inner, defaults.epsilon_inner)?,
        max_outer_iters: ctx
            .resolver
            .get("max-iters", opts.max_iters, defaults.max_outer_iters)?,
        max_inner_iters: ctx
            .resolver
            .get("max-inner", opts.max_inner, defaults.max_inner_iters)?,
        n_restarts: ctx
            .resolver
            .get("restarts", opts.restarts, defaults.n_restarts)?,
        zero_floor: ctx
            .resolver
            .get("zero-floor", opts.zero_floor, defaults.zero_floor)?,
        seed: ctx.seed,
        init_strategy: defaults.init_strategy,
    };
    cfg.validate()?;
    Ok(cfg)
}
