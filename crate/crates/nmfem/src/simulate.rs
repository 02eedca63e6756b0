//! Synthetic count data with known cluster structure, and the benchmark
//! harness that scores the fitting methods against the planted truth.

use std::fmt;
use std::io;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_kmeans, fit_plain_em};
use crate::dataset::CountDataset;
use crate::em::{e_step, fit, random_stochastic_matrix, FitConfig};
use crate::error::{Error, Result};
use crate::evaluation::{assign, pairwise_misclassification};
use crate::model::FactoredMixture;
use crate::seed;

/// How ground-truth word profiles are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WordDistribution {
    /// Uniform on the simplex (symmetric Dirichlet with unit concentration).
    #[default]
    SimplexUniform,
    /// Independent Uniform(0,1) coordinates, normalized to sum 1. Produces
    /// profiles concentrated near the simplex center, which makes planted
    /// clusters measurably harder to tell apart.
    NormalizedUniform01,
}

impl WordDistribution {
    pub fn as_str(self) -> &'static str {
        match self {
            WordDistribution::SimplexUniform => "simplex-uniform",
            WordDistribution::NormalizedUniform01 => "normalized-uniform01",
        }
    }
}

impl fmt::Display for WordDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WordDistribution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplex-uniform" => Ok(WordDistribution::SimplexUniform),
            "normalized-uniform01" => Ok(WordDistribution::NormalizedUniform01),
            other => Err(Error::invalid(format!(
                "unknown word distribution {other:?}; expected \"simplex-uniform\" or \
                 \"normalized-uniform01\""
            ))),
        }
    }
}

/// Everything that determines one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    /// Feature dimension.
    pub m: usize,
    /// Number of individuals.
    pub n: usize,
    /// Event count drawn for every individual.
    pub per_individual_trials: u64,
    /// Number of mixture components.
    pub k: usize,
    /// Number of ground-truth dictionary words.
    pub h0: usize,
    /// Dirichlet concentration for the loading columns; small values give
    /// near-pure words per cluster (easy), large values blur the clusters
    /// together (hard).
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub word_distribution: WordDistribution,
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::invalid(format!("m must be at least 2, got {}", self.m)));
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        if self.per_individual_trials == 0 {
            return Err(Error::invalid("per_individual_trials must be positive"));
        }
        if self.k == 0 {
            return Err(Error::invalid("K must be positive"));
        }
        if self.h0 == 0 || self.h0 > self.k {
            return Err(Error::invalid(format!(
                "H0 must satisfy 1 <= H0 <= K, got H0={}, K={}",
                self.h0, self.k
            )));
        }
        if self.h0 > self.m {
            return Err(Error::invalid(format!(
                "H0={} exceeds the feature dimension m={}",
                self.h0, self.m
            )));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid(format!(
                "alpha must be a positive finite number, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// A generated dataset with its planted truth.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: CountDataset,
    /// 1-based true cluster label per row.
    pub labels: Vec<usize>,
    pub true_model: FactoredMixture,
}

fn draw_words(spec: &SimulationSpec) -> Array2<f64> {
    let mut rng = seed::stream_rng(spec.seed, "sim-words", 0);
    match spec.word_distribution {
        WordDistribution::SimplexUniform => random_stochastic_matrix(spec.m, spec.h0, &mut rng),
        WordDistribution::NormalizedUniform01 => {
            let mut out = Array2::zeros((spec.m, spec.h0));
            for mut col in out.columns_mut() {
                loop {
                    let mut sum = 0.0;
                    for v in col.iter_mut() {
                        *v = rng.random::<f64>();
                        sum += *v;
                    }
                    if sum > 0.0 {
                        col.mapv_inplace(|v| v / sum);
                        break;
                    }
                }
            }
            out
        }
    }
}

fn draw_loadings(spec: &SimulationSpec) -> Result<Array2<f64>> {
    let mut rng = seed::stream_rng(spec.seed, "sim-loadings", 0);
    let gamma = Gamma::new(spec.alpha, 1.0)
        .map_err(|e| Error::invalid(format!("cannot sample Dirichlet({}) loadings: {e}", spec.alpha)))?;
    let mut out = Array2::zeros((spec.h0, spec.k));
    for mut col in out.columns_mut() {
        // Normalized Gamma(α, 1) draws are a symmetric Dirichlet(α) sample;
        // redraw the column in the (vanishingly rare) case every draw
        // underflows to zero.
        loop {
            let mut sum = 0.0;
            for v in col.iter_mut() {
                *v = gamma.sample(&mut rng);
                sum += *v;
            }
            if sum > 0.0 && sum.is_finite() {
                col.mapv_inplace(|v| v / sum);
                break;
            }
        }
    }
    Ok(out)
}

/// Draw one synthetic dataset: `h0` word profiles, Dirichlet(α) loading
/// columns, uniform labels, and one multinomial row per individual.
/// Bit-for-bit reproducible from the settings alone; every random
/// ingredient uses its own derived stream.
pub fn generate(spec: &SimulationSpec) -> Result<SyntheticData> {
    spec.validate()?;

    let dictionary = draw_words(spec);
    let loadings = draw_loadings(spec)?;
    let weights = Array1::from_elem(spec.k, 1.0 / spec.k as f64);
    let true_model = FactoredMixture::new(weights, dictionary, loadings)?;

    let mut label_rng = seed::stream_rng(spec.seed, "sim-labels", 0);
    let labels: Vec<usize> = (0..spec.n)
        .map(|_| label_rng.random_range(0..spec.k) + 1)
        .collect();

    let mut count_rng = seed::stream_rng(spec.seed, "sim-counts", 0);
    let theta = true_model.theta();
    let mut counts = Array2::<u64>::zeros((spec.n, spec.m));
    let mut cumulative = vec![0.0f64; spec.m];
    for (i, &label) in labels.iter().enumerate() {
        let col = theta.column(label - 1);
        let mut acc = 0.0;
        for (c, &t) in cumulative.iter_mut().zip(col.iter()) {
            acc += t;
            *c = acc;
        }
        for _ in 0..spec.per_individual_trials {
            let u: f64 = count_rng.random();
            let idx = cumulative.partition_point(|&c| c <= u).min(spec.m - 1);
            counts[(i, idx)] += 1;
        }
    }

    let feature_labels = (1..=spec.m).map(|j| format!("f{j}")).collect();
    let dataset = CountDataset::new(counts, feature_labels)?;
    Ok(SyntheticData {
        dataset,
        labels,
        true_model,
    })
}

/// The clustering methods the benchmark compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "nmf-em")]
    NmfEm,
    #[serde(rename = "em")]
    PlainEm,
    #[serde(rename = "kmeans")]
    KMeans,
}

pub const ALL_METHODS: [Method; 3] = [Method::NmfEm, Method::PlainEm, Method::KMeans];

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::NmfEm => "nmf-em",
            Method::PlainEm => "em",
            Method::KMeans => "kmeans",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nmf-em" => Ok(Method::NmfEm),
            "em" => Ok(Method::PlainEm),
            "kmeans" => Ok(Method::KMeans),
            other => Err(Error::invalid(format!(
                "unknown method {other:?}; expected \"nmf-em\", \"em\", or \"kmeans\""
            ))),
        }
    }
}

/// One (method, replication) score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: Method,
    pub alpha: f64,
    pub h0: usize,
    pub h_fit: usize,
    pub replication: usize,
    pub rate: f64,
}

/// Per-replication benchmark scores plus per-method summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    rows: Vec<BenchmarkRow>,
}

const BENCHMARK_CSV_HEADER: &str = "method,alpha,h0,h_fit,replication,rate";

impl BenchmarkTable {
    pub fn new(rows: Vec<BenchmarkRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("benchmark produced no rows".into()));
        }
        Ok(BenchmarkTable { rows })
    }

    pub fn rows(&self) -> &[BenchmarkRow] {
        &self.rows
    }

    /// Arithmetic mean rate of one method's replications.
    pub fn mean_rate(&self, method: Method) -> Option<f64> {
        let rates: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.rate)
            .collect();
        if rates.is_empty() {
            None
        } else {
            Some(rates.iter().sum::<f64>() / rates.len() as f64)
        }
    }

    /// (method, alpha, mean rate) summary in fixed method order, covering
    /// the methods present in the table.
    pub fn means(&self) -> Vec<(Method, f64, f64)> {
        ALL_METHODS
            .iter()
            .filter_map(|&m| {
                self.mean_rate(m).map(|rate| {
                    let alpha = self
                        .rows
                        .iter()
                        .find(|r| r.method == m)
                        .map(|r| r.alpha)
                        .expect("mean_rate found rows");
                    (m, alpha, rate)
                })
            })
            .collect()
    }

    pub fn to_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(BENCHMARK_CSV_HEADER.split(','))?;
        for r in &self.rows {
            w.write_record(&[
                r.method.to_string(),
                format!("{:?}", r.alpha),
                r.h0.to_string(),
                r.h_fit.to_string(),
                r.replication.to_string(),
                format!("{:?}", r.rate),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv<R: io::Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        {
            let headers = reader.headers()?;
            let expected: Vec<&str> = BENCHMARK_CSV_HEADER.split(',').collect();
            if headers.iter().collect::<Vec<_>>() != expected {
                return Err(Error::invalid(format!(
                    "benchmark CSV header must be \"{BENCHMARK_CSV_HEADER}\", got \"{}\"",
                    headers.iter().collect::<Vec<_>>().join(",")
                )));
            }
        }
        let mut rows = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let record = record?;
            let line = idx + 2;
            let get = |i: usize| -> Result<&str> {
                record
                    .get(i)
                    .ok_or_else(|| Error::invalid(format!("line {line}: missing column {i}")))
            };
            rows.push(BenchmarkRow {
                method: get(0)?.parse()?,
                alpha: get(1)?
                    .parse()
                    .map_err(|_| Error::invalid(format!("line {line}: bad alpha")))?,
                h0: get(2)?
                    .parse()
                    .map_err(|_| Error::invalid(format!("line {line}: bad h0")))?,
                h_fit: get(3)?
                    .parse()
                    .map_err(|_| Error::invalid(format!("line {line}: bad h_fit")))?,
                replication: get(4)?
                    .parse()
                    .map_err(|_| Error::invalid(format!("line {line}: bad replication")))?,
                rate: get(5)?
                    .parse()
                    .map_err(|_| Error::invalid(format!("line {line}: bad rate")))?,
            });
        }
        BenchmarkTable::new(rows)
    }
}

fn score_method(
    method: Method,
    data: &SyntheticData,
    h_fit: usize,
    cfg: &FitConfig,
    root_seed: u64,
    replication: usize,
) -> Result<f64> {
    let k = data.true_model.k();
    let predicted: Vec<usize> = match method {
        Method::NmfEm => {
            let cfg_m = FitConfig {
                seed: seed::derive_seed(root_seed, "bench-nmf-em", replication as u64),
                ..cfg.clone()
            };
            let report = fit(&data.dataset, k, h_fit, &cfg_m)?;
            assign(&e_step(&data.dataset, &report.model)?).labels().to_vec()
        }
        Method::PlainEm => {
            let cfg_m = FitConfig {
                seed: seed::derive_seed(root_seed, "bench-em", replication as u64),
                ..cfg.clone()
            };
            let report = fit_plain_em(&data.dataset, k, &cfg_m)?;
            assign(&e_step(&data.dataset, &report.model)?).labels().to_vec()
        }
        Method::KMeans => {
            let km_seed = seed::derive_seed(root_seed, "bench-kmeans", replication as u64);
            fit_kmeans(&data.dataset, k, km_seed, cfg.n_restarts)?.labels
        }
    };
    pairwise_misclassification(&data.labels, &predicted)
}

/// Run a subset of methods over `replications` independently generated
/// datasets. Each replication regenerates from a derived seed, scores every
/// requested method, and yields one row per successful (method, replication)
/// pair; failures are logged and excluded. Deterministic given the settings.
pub fn run_benchmark_methods(
    spec: &SimulationSpec,
    h_fit: usize,
    replications: usize,
    cfg: &FitConfig,
    methods: &[Method],
) -> Result<BenchmarkTable> {
    spec.validate()?;
    cfg.validate()?;
    if replications == 0 {
        return Err(Error::invalid("replications must be at least 1"));
    }
    if methods.is_empty() {
        return Err(Error::invalid("no methods requested"));
    }
    if h_fit == 0 || h_fit > spec.k || h_fit > spec.m {
        return Err(Error::invalid(format!(
            "H_fit must satisfy 1 <= H_fit <= min(K, m), got H_fit={h_fit}, K={}, m={}",
            spec.k, spec.m
        )));
    }

    let per_replication: Vec<Vec<BenchmarkRow>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut spec_r = spec.clone();
            spec_r.seed = seed::derive_seed(spec.seed, "bench-replication", r as u64);
            let data = match generate(&spec_r) {
                Ok(d) => d,
                Err(e) => {
                    log::warn!("replication {r}: generation failed and is excluded: {e}");
                    return Vec::new();
                }
            };
            methods
                .iter()
                .filter_map(|&method| match score_method(method, &data, h_fit, cfg, spec.seed, r) {
                    Ok(rate) => Some(BenchmarkRow {
                        method,
                        alpha: spec.alpha,
                        h0: spec.h0,
                        h_fit,
                        replication: r,
                        rate,
                    }),
                    Err(e) => {
                        log::warn!("replication {r}, method {method}: excluded after error: {e}");
                        None
                    }
                })
                .collect()
        })
        .collect();

    let rows: Vec<BenchmarkRow> = per_replication.into_iter().flatten().collect();
    let excluded = replications * methods.len() - rows.len();
    if excluded > 0 {
        log::warn!("{excluded} (method, replication) cells were excluded after failures");
    }
    BenchmarkTable::new(rows)
}

/// Run all three methods; see `run_benchmark_methods`.
pub fn run_benchmark(
    spec: &SimulationSpec,
    h_fit: usize,
    replications: usize,
    cfg: &FitConfig,
) -> Result<BenchmarkTable> {
    run_benchmark_methods(spec, h_fit, replications, cfg, &ALL_METHODS)
}
