//! `report`: interpret a fitted model against its count matrix — word and
//! cluster summaries, a long-format heatmap table, and hard assignments.

use std::path::PathBuf;

use nmfem::{
    assign, decomposition_report, e_step, read_matrix_csv, read_model_json, Error, Result,
};

use crate::manifest::RunManifest;

use super::{open_input, write_file, Context};

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Fitted model document (model.json from `fit`).
    #[arg(long)]
    pub model: PathBuf,
    /// Count matrix CSV the model was fitted on
    /// (gzip-compressed when the name ends in .gz).
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for report.json, heatmap.csv, assignments.csv,
    /// run_manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &ReportArgs, ctx: &Context) -> Result<i32> {
    ctx.resolver.finish()?;

    let (model, model_labels) = read_model_json(open_input(&args.model)?)?;
    let (dataset, row_ids) = read_matrix_csv(open_input(&args.input)?)?;
    if model_labels != dataset.feature_labels() {
        return Err(Error::invalid(format!(
            "model and count matrix disagree on features: model has {} labels \
             starting {:?}, matrix has {} starting {:?}",
            model_labels.len(),
            model_labels.first(),
            dataset.feature_labels().len(),
            dataset.feature_labels().first(),
        )));
    }

    let report = decomposition_report(&model, &model_labels)?;
    let responsibilities = e_step(&dataset, &model)?;
    let assignment = assign(&responsibilities);

    std::fs::create_dir_all(&args.out)?;
    write_file(&args.out, "report.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        std::io::Write::write_all(w, b"\n")?;
        Ok(())
    })?;
    write_file(&args.out, "heatmap.csv", |w| report.to_long_csv(w))?;
    write_file(&args.out, "assignments.csv", |w| {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(["card_id", "cluster"])?;
        for (id, label) in row_ids.iter().zip(assignment.labels()) {
            writer.write_record([id.as_str(), label.to_string().as_str()])?;
        }
        writer.flush()?;
        Ok(())
    })?;

    let mut manifest = RunManifest::new("report", ctx.resolver.snapshot(), ctx.seed);
    manifest.add_input(&args.model)?;
    manifest.add_input(&args.input)?;
    manifest.add_output("report.json");
    manifest.add_output("heatmap.csv");
    manifest.add_output("assignments.csv");
    manifest.wall_time_seconds = ctx.started.elapsed().as_secs_f64();
    manifest.write(&args.out)?;

    println!(
        "report: {} rows assigned across K={} clusters using H={} words",
        assignment.len(),
        model.k(),
        model.h(),
    );
    for cluster in &report.clusters {
        let top: Vec<String> = cluster
            .shares
            .iter()
            .filter(|s| s.share >= 0.05)
            .map(|s| format!("word {} ({:.0}%)", s.word, s.share * 100.0))
            .collect();
        println!(
            "  cluster {} (weight {:.3}): {}",
            cluster.cluster,
            cluster.weight,
            top.join(", "),
        );
    }
    Ok(0)
}
