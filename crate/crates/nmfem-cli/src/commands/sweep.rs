//! `sweep`: fit a range of cluster counts (K) or word counts (H), write the
//! score table, and pick sizes by AIC, BIC, and the slope heuristic.

use std::path::PathBuf;

use nmfem::{
    read_matrix_csv, slope_select, sweep_h, sweep_k, Error, FitConfig, Result, SweepAxis,
};

use crate::manifest::RunManifest;
use crate::resolver::parse_range;

use super::{open_input, resolve_fit_config, write_file, Context, FitOpts};

#[derive(Debug, clap::Args)]
pub struct SweepArgs {
    /// Count matrix CSV (gzip-compressed when the name ends in .gz).
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for sweep.csv, selection.json, run_manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Cluster counts to try: inclusive span "2..12" or list "2,4,8".
    #[arg(long, conflicts_with_all = ["h_range", "k"])]
    pub k_range: Option<String>,
    /// Word counts to try at a fixed --k: span "1..8" or list "1,2,4".
    #[arg(long, requires = "k")]
    pub h_range: Option<String>,
    /// Fixed cluster count for an H sweep.
    #[arg(short = 'k', long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub fit_opts: FitOpts,
}

pub fn run(args: &SweepArgs, ctx: &Context) -> Result<i32> {
    let k_range = ctx.resolver.optional("k-range", args.k_range.clone())?;
    let h_range = ctx.resolver.optional("h-range", args.h_range.clone())?;
    let cfg = resolve_fit_config(ctx, &args.fit_opts, &FitConfig::default())?;

    let (axis, values, fixed_k) = match (k_range, h_range) {
        (Some(_), Some(_)) => {
            return Err(Error::invalid(
                "pass either --k-range or --h-range, not both",
            ));
        }
        (None, None) => {
            return Err(Error::invalid(
                "pass --k-range to sweep cluster counts or --h-range with --k \
                 to sweep word counts",
            ));
        }
        (Some(raw), None) => (SweepAxis::K, parse_range(&raw)?, None),
        (None, Some(raw)) => {
            let k: usize = ctx.resolver.require("k", args.k)?;
            (SweepAxis::H, parse_range(&raw)?, Some(k))
        }
    };
    ctx.resolver.finish()?;

    // The slope heuristic needs at least 4 points; check before any fitting
    // so a too-short range fails in milliseconds, not minutes.
    if values.len() < 4 {
        return Err(Error::InsufficientData {
            context: "sweep range (the slope heuristic needs 4 sizes)".into(),
            needed: 4,
            got: values.len(),
        });
    }

    let (dataset, _row_ids) = read_matrix_csv(open_input(&args.input)?)?;
    let table = match axis {
        SweepAxis::K => sweep_k(&dataset, &values, &cfg)?,
        SweepAxis::H => sweep_h(&dataset, fixed_k.expect("checked above"), &values, &cfg)?,
    };
    let selection = slope_select(&table, axis)?;

    std::fs::create_dir_all(&args.out)?;
    write_file(&args.out, "sweep.csv", |w| table.to_csv(w))?;
    write_file(&args.out, "selection.json", |w| {
        let axis_name = match axis {
            SweepAxis::K => "K",
            SweepAxis::H => "H",
        };
        let value = serde_json::json!({
            "axis": axis_name,
            "slope_heuristic": selection,
            "best_aic": table.best_by_aic(),
            "best_bic": table.best_by_bic(),
        });
        serde_json::to_writer_pretty(&mut *w, &value)?;
        std::io::Write::write_all(w, b"\n")?;
        Ok(())
    })?;

    let mut manifest = RunManifest::new("sweep", ctx.resolver.snapshot(), ctx.seed);
    manifest.add_input(&args.input)?;
    manifest.add_output("sweep.csv");
    manifest.add_output("selection.json");
    manifest.wall_time_seconds = ctx.started.elapsed().as_secs_f64();
    manifest.write(&args.out)?;

    let axis_name = match axis {
        SweepAxis::K => "K",
        SweepAxis::H => "H",
    };
    println!(
        "sweep: {} values of {axis_name}; slope heuristic picks {axis_name}={} \
         (linear tail from {axis_name}={}, slope {:.6} per parameter), \
         AIC picks {axis_name}={}, BIC picks {axis_name}={}",
        values.len(),
        selection.chosen,
        selection.linear_region_start,
        selection.slope,
        match axis {
            SweepAxis::K => table.best_by_aic().k,
            SweepAxis::H => table.best_by_aic().h,
        },
        match axis {
            SweepAxis::K => table.best_by_bic().k,
            SweepAxis::H => table.best_by_bic().h,
        },
    );
    Ok(0)
}
