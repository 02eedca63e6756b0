//! `fit`: fit the factored mixture to a count matrix for one (K, H) pair.

use std::path::PathBuf;

use nmfem::{fit, read_matrix_csv, write_model_json, FitConfig, Result};

use crate::manifest::RunManifest;

use super::{open_input, resolve_fit_config, write_file, Context, FitOpts};

#[derive(Debug, clap::Args)]
pub struct FitArgs {
    /// Count matrix CSV: key column first, one feature column per bin
    /// (gzip-compressed when the name ends in .gz).
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for model.json, fit_report.json, loglik_trace.csv,
    /// run_manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of clusters.
    #[arg(short = 'k', long)]
    pub k: Option<usize>,
    /// Number of dictionary words (at most min(features, clusters)).
    #[arg(short = 'H', long)]
    pub h: Option<usize>,
    #[command(flatten)]
    pub fit_opts: FitOpts,
}

pub fn run(args: &FitArgs, ctx: &Context) -> Result<i32> {
    let k: usize = ctx.resolver.require("k", args.k)?;
    let h: usize = ctx.resolver.require("h", args.h)?;
    let cfg = resolve_fit_config(ctx, &args.fit_opts, &FitConfig::default())?;
    ctx.resolver.finish()?;

    let (dataset, _row_ids) = read_matrix_csv(open_input(&args.input)?)?;
    let report = fit(&dataset, k, h, &cfg)?;

    std::fs::create_dir_all(&args.out)?;
    write_file(&args.out, "model.json", |w| {
        write_model_json(w, &report.model, dataset.feature_labels())
    })?;
    write_file(&args.out, "fit_report.json", |w| {
        let value = report.to_json_value(dataset.feature_labels())?;
        serde_json::to_writer_pretty(&mut *w, &value)?;
        std::io::Write::write_all(w, b"\n")?;
        Ok(())
    })?;
    write_file(&args.out, "loglik_trace.csv", |w| {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(["iteration", "loglik"])?;
        for (i, ll) in report.loglik_trace.iter().enumerate() {
            writer.write_record([i.to_string(), format!("{ll:?}")])?;
        }
        writer.flush()?;
        Ok(())
    })?;

    let mut manifest = RunManifest::new("fit", ctx.resolver.snapshot(), ctx.seed);
    manifest.add_input(&args.input)?;
    manifest.add_output("model.json");
    manifest.add_output("fit_report.json");
    manifest.add_output("loglik_trace.csv");
    manifest.wall_time_seconds = ctx.started.elapsed().as_secs_f64();
    manifest.write(&args.out)?;

    println!(
        "fit: n={} m={} K={k} H={h} loglik={:.6} aic={:.6} bic={:.6} \
         after {} outer iterations ({})",
        dataset.n(),
        dataset.m(),
        report.loglik,
        report.aic,
        report.bic,
        report.outer_iterations,
        if report.converged { "converged" } else { "NOT converged" },
    );
    if report.converged {
        Ok(0)
    } else {
        log::warn!(
            "fit did not converge within {} outer iterations; outputs were \
             still written",
            cfg.max_outer_iters
        );
        Ok(3)
    }
}
