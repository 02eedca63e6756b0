//! `bench`: synthetic benchmark comparing methods on generated mixtures
//! whose difficulty is controlled by the loading concentration alpha.

use std::path::PathBuf;
use std::str::FromStr;

use nmfem::{
    run_benchmark_methods, Error, FitConfig, InitStrategy, Method, Result, SimulationSpec,
    WordDistribution, ALL_METHODS,
};

use crate::manifest::RunManifest;

use super::{resolve_fit_config, write_file, Context, FitOpts};

#[derive(Debug, clap::Args)]
pub struct BenchArgs {
    /// Directory for benchmark.csv, benchmark_means.csv, run_manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Feature dimension of the generated data.
    #[arg(long)]
    pub m: Option<usize>,
    /// Individuals per generated dataset.
    #[arg(long)]
    pub n: Option<usize>,
    /// Events drawn per individual.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Ground-truth (and fitted) cluster count.
    #[arg(short = 'k', long)]
    pub k: Option<usize>,
    /// Ground-truth dictionary size.
    #[arg(long)]
    pub h0: Option<usize>,
    /// Dictionary size the factored fit uses.
    #[arg(long)]
    pub h_fit: Option<usize>,
    /// Loading concentration; larger blurs clusters together (harder).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Independently generated datasets to average over.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Comma-separated subset of nmf-em,em,kmeans.
    #[arg(long)]
    pub methods: Option<String>,
    /// Ground-truth word profiles: simplex-uniform or normalized-uniform01.
    #[arg(long)]
    pub word_distribution: Option<String>,
    #[command(flatten)]
    pub fit_opts: FitOpts,
}

/// EM budget sized for repeated benchmark fits rather than one careful fit.
fn bench_fit_defaults() -> FitConfig {
    FitConfig {
        epsilon_outer: 1e-3,
        epsilon_inner: 1e-6,
        max_outer_iters: 400,
        max_inner_iters: 50,
        n_restarts: 10,
        seed: 0,
        init_strategy: InitStrategy::WarmStartInner,
        zero_floor: 1e-12,
    }
}

fn parse_methods(raw: &str) -> Result<Vec<Method>> {
    let methods: Vec<Method> = raw
        .split(',')
        .map(|part| Method::from_str(part.trim()))
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::invalid("no methods requested"));
    }
    Ok(methods)
}

pub fn run(args: &BenchArgs, ctx: &Context) -> Result<i32> {
    let r = &ctx.resolver;
    let spec = SimulationSpec {
        m: r.get("m", args.m, 100)?,
        n: r.get("n", args.n, 1500)?,
        per_individual_trials: r.get("trials", args.trials, 150)?,
        k: r.get("k", args.k, 10)?,
        h0: r.get("h0", args.h0, 4)?,
        alpha: r.get("alpha", args.alpha, 0.2)?,
        seed: ctx.seed,
        word_distribution: WordDistribution::from_str(&r.get(
            "word-distribution",
            args.word_distribution.clone(),
            "simplex-uniform".to_string(),
        )?)?,
    };
    spec.validate()?;
    let h_fit = r.get("h-fit", args.h_fit, 4)?;
    let replications = r.get("replications", args.replications, 10)?;
    let methods = parse_methods(&r.get(
        "methods",
        args.methods.clone(),
        ALL_METHODS.map(Method::as_str).join(","),
    )?)?;
    let cfg = resolve_fit_config(ctx, &args.fit_opts, &bench_fit_defaults())?;
    ctx.resolver.finish()?;

    let table = run_benchmark_methods(&spec, h_fit, replications, &cfg, &methods)?;

    std::fs::create_dir_all(&args.out)?;
    write_file(&args.out, "benchmark.csv", |w| table.to_csv(w))?;
    write_file(&args.out, "benchmark_means.csv", |w| {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(["method", "alpha", "mean_rate"])?;
        for (method, alpha, mean) in table.means() {
            writer.write_record([
                method.as_str().to_string(),
                format!("{alpha:?}"),
                format!("{mean:?}"),
            ])?;
        }
        writer.flush()?;
        Ok(())
    })?;

    let mut manifest = RunManifest::new("bench", ctx.resolver.snapshot(), ctx.seed);
    manifest.add_output("benchmark.csv");
    manifest.add_output("benchmark_means.csv");
    manifest.wall_time_seconds = ctx.started.elapsed().as_secs_f64();
    manifest.write(&args.out)?;

    println!(
        "bench: m={} n={} K={} H0={} H_fit={h_fit} alpha={} over {replications} replications",
        spec.m, spec.n, spec.k, spec.h0, spec.alpha
    );
    for (method, _alpha, mean) in table.means() {
        println!("  {:<7} mean pairwise misclassification {:.4}", method.as_str(), mean);
    }
    Ok(0)
}
