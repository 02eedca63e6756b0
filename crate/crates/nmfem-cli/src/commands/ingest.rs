//! `ingest`: turn a validation-event CSV into per-card weekly activity
//! profiles plus home-station assignments.

use std::path::PathBuf;

use nmfem::{ingest_csv, write_matrix_csv, ProfileBuildConfig, Result};

use crate::manifest::RunManifest;

use super::{open_input, write_file, Context};

#[derive(Debug, clap::Args)]
pub struct IngestArgs {
    /// Event CSV with header card_id,timestamp,station_id
    /// (gzip-compressed when the name ends in .gz).
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for profiles.csv, home_stations.csv, run_manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum distinct active days for a card to be kept.
    #[arg(long)]
    pub min_active_days: Option<usize>,
    /// Fraction of a card's days its modal first-boarding station must cover.
    #[arg(long)]
    pub home_threshold: Option<f64>,
    /// Boardings before this hour never count as a day's first boarding.
    #[arg(long)]
    pub cutoff_hour: Option<u32>,
    /// Tolerated fraction of malformed rows before the whole file is rejected.
    #[arg(long)]
    pub bad_row_budget: Option<f64>,
}

pub fn run(args: &IngestArgs, ctx: &Context) -> Result<i32> {
    let defaults = ProfileBuildConfig::default();
    let cfg = ProfileBuildConfig {
        min_active_days: ctx.resolver.get(
            "min-active-days",
            args.min_active_days,
            defaults.min_active_days,
        )?,
        home_station_threshold: ctx.resolver.get(
            "home-threshold",
            args.home_threshold,
            defaults.home_station_threshold,
        )?,
        first_boarding_cutoff_hour: ctx.resolver.get(
            "cutoff-hour",
            args.cutoff_hour,
            defaults.first_boarding_cutoff_hour,
        )?,
        bad_row_budget: ctx.resolver.get(
            "bad-row-budget",
            args.bad_row_budget,
            defaults.bad_row_budget,
        )?,
    };
    cfg.validate()?;
    ctx.resolver.finish()?;

    let build = ingest_csv(open_input(&args.input)?, &cfg)?;
    for issue in &build.issues {
        log::warn!("{}: line {}: {}", args.input.display(), issue.line, issue.message);
    }

    std::fs::create_dir_all(&args.out)?;
    write_file(&args.out, "profiles.csv", |w| {
        write_matrix_csv(w, &build.dataset, "card_id", &build.card_index)
    })?;
    write_file(&args.out, "home_stations.csv", |w| {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(["card_id", "home_station"])?;
        for (card, station) in build.card_index.iter().zip(&build.home_stations) {
            writer.write_record([card.as_str(), station.as_str()])?;
        }
        writer.flush()?;
        Ok(())
    })?;

    let mut manifest = RunManifest::new("ingest", ctx.resolver.snapshot(), ctx.seed);
    manifest.add_input(&args.input)?;
    manifest.add_output("profiles.csv");
    manifest.add_output("home_stations.csv");
    manifest.wall_time_seconds = ctx.started.elapsed().as_secs_f64();
    manifest.write(&args.out)?;

    let s = &build.summary;
    println!(
        "ingest: {} events ({} bad rows skipped), {} cards seen, {} kept \
         ({} below {} active days, {} without a home station)",
        s.events,
        s.bad_rows,
        s.cards_seen,
        build.card_index.len(),
        s.dropped_inactive,
        cfg.min_active_days,
        s.dropped_no_home,
    );
    Ok(0)
}
