//! Model types: the factored mixture, responsibilities, hard assignments,
//! fit reports, and parameter counting.

use std::io;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on simplex sums after renormalization.
pub const SIMPLEX_TOL: f64 = 1e-10;
/// Tolerance on the column sums of the product of two stochastic factors.
pub const PRODUCT_COLUMN_TOL: f64 = 1e-8;
/// Tolerance on responsibility row sums.
pub const RESPONSIBILITY_ROW_TOL: f64 = 1e-10;

fn check_simplex_columns(name: &str, matrix: &Array2<f64>, tol: f64) -> Result<()> {
    for (j, col) in matrix.columns().into_iter().enumerate() {
        let mut sum = 0.0;
        for &v in col.iter() {
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "{name} column {j} contains a non-finite entry"
                )));
            }
            if v < 0.0 {
                return Err(Error::invalid(format!(
                    "{name} column {j} contains a negative entry ({v})"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > tol {
            return Err(Error::invalid(format!(
                "{name} column {j} sums to {sum}, not 1 within {tol:e}"
            )));
        }
    }
    Ok(())
}

/// A mixture of multinomials whose M×K parameter matrix is the product of an
/// M×H dictionary and an H×K loadings matrix, both column-stochastic, plus a
/// weight vector on the simplex. The product `θ = dictionary · loadings` is
/// cached at construction (its columns are automatically on the simplex).
#[derive(Debug, Clone)]
pub struct FactoredMixture {
    weights: Array1<f64>,
    dictionary: Array2<f64>,
    loadings: Array2<f64>,
    theta: Array2<f64>,
}

impl FactoredMixture {
    /// Validate and assemble a model. `weights` has length K, `dictionary`
    /// is M×H and `loadings` is H×K; H must satisfy `1 ≤ H ≤ min(M, K)`.
    pub fn new(
        weights: Array1<f64>,
        dictionary: Array2<f64>,
        loadings: Array2<f64>,
    ) -> Result<Self> {
        let k = weights.len();
        let (m, h) = dictionary.dim();
        let (lh, lk) = loadings.dim();
        if k == 0 {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        if m < 2 {
            return Err(Error::invalid(format!(
                "dictionary needs at least 2 feature rows, got {m}"
            )));
        }
        if h == 0 || h > m.min(k) {
            return Err(Error::invalid(format!(
                "inner dimension H={h} must satisfy 1 <= H <= min(M={m}, K={k})"
            )));
        }
        if lh != h || lk != k {
            return Err(Error::dim(
                "loadings shape",
                format!("{h}x{k}"),
                format!("{lh}x{lk}"),
            ));
        }

        let mut weight_sum = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!(
                    "weight {i} must be finite and nonnegative, got {w}"
                )));
            }
            weight_sum += w;
        }
        if (weight_sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!(
                "weights sum to {weight_sum}, not 1 within {SIMPLEX_TOL:e}"
            )));
        }

        check_simplex_columns("dictionary", &dictionary, SIMPLEX_TOL)?;
        check_simplex_columns("loadings", &loadings, SIMPLEX_TOL)?;

        let theta = dictionary.dot(&loadings);
        check_simplex_columns("dictionary·loadings", &theta, PRODUCT_COLUMN_TOL)?;

        Ok(FactoredMixture {
            weights,
            dictionary,
            loadings,
            theta,
        })
    }

    /// Number of mixture components.
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Inner dimension (number of dictionary columns).
    pub fn h(&self) -> usize {
        self.dictionary.ncols()
    }

    /// Feature dimension.
    pub fn m(&self) -> usize {
        self.dictionary.nrows()
    }

    /// Mixture weights `p` (length K, on the simplex).
    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    /// The M×H dictionary; each column is an elementary profile.
    pub fn dictionary(&self) -> &Array2<f64> {
        &self.dictionary
    }

    /// The H×K loadings; column k mixes dictionary columns into component k.
    pub fn loadings(&self) -> &Array2<f64> {
        &self.loadings
    }

    /// The M×K component parameter matrix `θ = dictionary · loadings`,
    /// cached at construction.
    pub fn theta(&self) -> &Array2<f64> {
        &self.theta
    }
}

/// Posterior component membership probabilities, one row per individual.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    values: Array2<f64>,
}

impl Responsibilities {
    /// Validate a responsibility matrix: entries in [0, 1], rows summing to
    /// 1 within [`RESPONSIBILITY_ROW_TOL`].
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, k) = values.dim();
        if n == 0 || k == 0 {
            return Err(Error::invalid("responsibilities must be non-empty"));
        }
        for (i, row) in values.outer_iter().enumerate() {
            let mut sum = 0.0;
            for &v in row.iter() {
                if !v.is_finite() || !(0.0..=1.0 + 1e-12).contains(&v) {
                    return Err(Error::invalid(format!(
                        "responsibility row {i} has entry {v} outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > RESPONSIBILITY_ROW_TOL {
                return Err(Error::invalid(format!(
                    "responsibility row {i} sums to {sum}, not 1 within {RESPONSIBILITY_ROW_TOL:e}"
                )));
            }
        }
        Ok(Responsibilities { values })
    }

    /// Hard one-hot responsibilities from 1-based labels.
    pub fn from_hard_labels(labels: &[usize], k: usize) -> Result<Self> {
        if labels.is_empty() || k == 0 {
            return Err(Error::invalid("labels and K must be non-empty"));
        }
        let mut values = Array2::zeros((labels.len(), k));
        for (i, &label) in labels.iter().enumerate() {
            if label == 0 || label > k {
                return Err(Error::invalid(format!(
                    "label {label} at row {i} is outside 1..={k}"
                )));
            }
            values[(i, label - 1)] = 1.0;
        }
        Ok(Responsibilities { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }
}

/// A hard clustering: 1-based component labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardAssignment {
    labels: Vec<usize>,
    k: usize,
}

impl HardAssignment {
    /// Validate labels against the component count `k` (labels are 1-based).
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.is_empty() || k == 0 {
            return Err(Error::invalid("assignment needs rows and components"));
        }
        for (i, &label) in labels.iter().enumerate() {
            if label == 0 || label > k {
                return Err(Error::invalid(format!(
                    "label {label} at row {i} is outside 1..={k}"
                )));
            }
        }
        Ok(HardAssignment { labels, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Free-parameter count of the factored mixture:
/// `H(M−1) + K(H−1) + (K−1)`.
pub fn degrees_of_freedom(m: usize, h: usize, k: usize) -> Result<usize> {
    if m < 2 {
        return Err(Error::invalid(format!("M must be at least 2, got {m}")));
    }
    if h == 0 || k == 0 || h > k {
        return Err(Error::invalid(format!(
            "H and K must satisfy 1 <= H <= K, got H={h}, K={k}"
        )));
    }
    Ok(h * (m - 1) + k * (h - 1) + (k - 1))
}

/// Free-parameter count of an unrestricted mixture of multinomials:
/// `K(M−1) + (K−1)`.
pub fn unrestricted_degrees_of_freedom(m: usize, k: usize) -> Result<usize> {
    if m < 2 {
        return Err(Error::invalid(format!("M must be at least 2, got {m}")));
    }
    if k == 0 {
        return Err(Error::invalid("K must be positive"));
    }
    Ok(k * (m - 1) + (k - 1))
}

/// Result of one fitting run: the winning model plus convergence metadata
/// and information criteria.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: FactoredMixture,
    /// Final log-likelihood; always equals the last trace entry.
    pub loglik: f64,
    /// Log-likelihood after each outer iteration, starting at the
    /// initialization, for the winning restart.
    pub loglik_trace: Vec<f64>,
    /// Number of outer EM iterations performed by the winning restart.
    pub outer_iterations: usize,
    pub converged: bool,
    pub dof: usize,
    pub aic: f64,
    pub bic: f64,
    /// Root seed of the fit configuration that produced this report.
    pub seed: u64,
    pub restarts_tried: usize,
}

impl FitReport {
    /// JSON value for reports; embeds the model document with its labels.
    pub fn to_json_value(&self, feature_labels: &[String]) -> Result<serde_json::Value> {
        let model = model_json(&self.model, feature_labels)?;
        Ok(serde_json::json!({
            "model": model,
            "loglik": self.loglik,
            "loglik_trace": self.loglik_trace,
            "outer_iterations": self.outer_iterations,
            "converged": self.converged,
            "dof": self.dof,
            "aic": self.aic,
            "bic": self.bic,
            "seed": self.seed,
            "restarts_tried": self.restarts_tried,
        }))
    }
}

/// Serialized form of a model document.
#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "M")]
    m: usize,
    weights: Vec<f64>,
    /// M rows of H entries.
    dictionary: Vec<Vec<f64>>,
    /// H rows of K entries.
    loadings: Vec<Vec<f64>>,
    feature_labels: Vec<String>,
}

fn matrix_rows(matrix: &Array2<f64>) -> Vec<Vec<f64>> {
    matrix.outer_iter().map(|row| row.to_vec()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], expect_cols: usize, what: &str) -> Result<Array2<f64>> {
    let n = rows.len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != expect_cols {
            return Err(Error::dim(
                format!("{what} row {i}"),
                format!("{expect_cols} entries"),
                format!("{} entries", row.len()),
            ));
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((n, expect_cols), flat)
        .map_err(|e| Error::invalid(format!("{what}: {e}")))
}

fn model_json(model: &FactoredMixture, feature_labels: &[String]) -> Result<serde_json::Value> {
    if feature_labels.len() != model.m() {
        return Err(Error::dim(
            "model document labels",
            format!("{} labels", model.m()),
            format!("{} labels", feature_labels.len()),
        ));
    }
    let doc = ModelDocument {
        k: model.k(),
        h: model.h(),
        m: model.m(),
        weights: model.weights().to_vec(),
        dictionary: matrix_rows(model.dictionary()),
        loadings: matrix_rows(model.loadings()),
        feature_labels: feature_labels.to_vec(),
    };
    Ok(serde_json::to_value(doc)?)
}

/// Write a model as a single JSON document carrying the factor matrices and
/// the feature labels. Values survive a round-trip exactly.
pub fn write_model_json<W: io::Write>(
    out: W,
    model: &FactoredMixture,
    feature_labels: &[String],
) -> Result<()> {
    let value = model_json(model, feature_labels)?;
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, &value)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Read a model document written by [`write_model_json`]; the result is
/// re-validated on construction.
pub fn read_model_json<R: io::Read>(input: R) -> Result<(FactoredMixture, Vec<String>)> {
    let doc: ModelDocument = serde_json::from_reader(input)?;
    if doc.weights.len() != doc.k {
        return Err(Error::dim(
            "model document weights",
            format!("{} entries", doc.k),
            format!("{} entries", doc.weights.len()),
        ));
    }
    if doc.dictionary.len() != doc.m {
        return Err(Error::dim(
            "model document dictionary",
            format!("{} rows", doc.m),
            format!("{} rows", doc.dictionary.len()),
        ));
    }
    if doc.loadings.len() != doc.h {
        return Err(Error::dim(
            "model document loadings",
            format!("{} rows", doc.h),
            format!("{} rows", doc.loadings.len()),
        ));
    }
    if doc.feature_labels.len() != doc.m {
        return Err(Error::dim(
            "model document labels",
            format!("{} labels", doc.m),
            format!("{} labels", doc.feature_labels.len()),
        ));
    }
    let dictionary = rows_to_matrix(&doc.dictionary, doc.h, "dictionary")?;
    let loadings = rows_to_matrix(&doc.loadings, doc.k, "loadings")?;
    let model = FactoredMixture::new(Array1::from_vec(doc.weights), dictionary, loadings)?;
    Ok((model, doc.feature_labels))
}
