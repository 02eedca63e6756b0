//! Simultaneous dimension reduction and clustering for count data.
//!
//! Individuals are modeled as a K-component mixture of multinomials whose
//! component distributions share a low-rank structure: every component is a
//! convex combination of H common "words", `θ = Φ·Λ` with column-stochastic
//! factors. Fitting alternates an exact E-step with a nested multiplicative
//! minimization for the factors, so clusters stay interpretable as mixtures
//! of a small dictionary.
//!
//! The crate also ships the surrounding workflow: an unrestricted
//! mixture-of-multinomials EM and a k-means baseline, model-size selection
//! (penalized criteria and a slope heuristic over sweeps), a synthetic
//! benchmark harness with planted ground truth, and an ingestion pipeline
//! that turns raw smart-card validation events into weekly temporal
//! profiles.
//!
//! # Quick start
//!
//! ```
//! use nmfem::{fit, CountDataset, FitConfig};
//! use ndarray::array;
//!
//! let counts = array![[12, 3, 1], [11, 2, 2], [1, 9, 6], [2, 8, 7]];
//! let labels = vec!["a".into(), "b".into(), "c".into()];
//! let data = CountDataset::new(counts, labels)?;
//! let report = fit(&data, 2, 1, &FitConfig::default())?;
//! assert_eq!(report.model.k(), 2);
//! # Ok::<(), nmfem::Error>(())
//! ```

/// Cap the process-wide worker-thread pool used for parallel restarts and
/// replications. Call at most once, before any parallel work starts.
pub fn configure_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(Error::invalid("thread count must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::invalid(format!("cannot configure {threads} worker threads: {e}")))
}

pub mod baselines;
pub mod dataset;
pub mod em;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod likelihood;
pub mod model;
pub mod seed;
pub mod selection;
pub mod simulate;

pub use baselines::{fit_kmeans, fit_plain_em, fit_plain_em_from, KMeansResult};
pub use dataset::{read_matrix_csv, write_matrix_csv, CountDataset};
pub use em::{
    e_step, fit, fit_from, multiplicative_m_step, update_weights, weighted_counts, FitConfig,
    InitStrategy, MStepOutcome, WeightedCounts,
};
pub use error::{Error, Result};
pub use evaluation::{
    assign, decomposition_report, pairwise_misclassification, ClusterSummary, DecompositionReport,
    WordShare, WordSummary,
};
pub use ingest::{
    bin_index, bin_labels, build_profiles, ingest_csv, read_events_csv, EventLog, IngestSummary,
    ProfileBuild, ProfileBuildConfig, RowIssue, ValidationEvent, BIN_COUNT,
};
pub use likelihood::log_likelihood;
pub use model::{
    degrees_of_freedom, read_model_json, unrestricted_degrees_of_freedom, write_model_json,
    FactoredMixture, FitReport, HardAssignment, Responsibilities,
};
pub use seed::{derive_seed, stream_rng};
pub use selection::{
    criteria, criteria_from_dof, slope_select, sweep_h, sweep_k, PenalizedPoint, SlopeSelection,
    SweepAxis, SweepRecord, SweepTable,
};
pub use simulate::{
    generate, run_benchmark, run_benchmark_methods, BenchmarkRow, BenchmarkTable, Method,
    SimulationSpec, SyntheticData, WordDistribution, ALL_METHODS,
};
