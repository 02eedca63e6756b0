//! The factored-mixture EM fit: expectation step, weight update, weighted
//! counts, the nested multiplicative-update M-step, and the multi-start
//! outer loop.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CountDataset;
use crate::error::{Error, Result};
use crate::likelihood::posterior_and_loglik;
use crate::model::{degrees_of_freedom, FactoredMixture, FitReport, Responsibilities};
use crate::seed;
use crate::selection::criteria_from_dof;

/// How the inner multiplicative loop is initialized at each outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Start from the current factors. This makes every outer iteration a
    /// generalized EM step and guarantees a monotone log-likelihood trace.
    WarmStartInner,
    /// Draw fresh random factors each outer iteration. Kept for experiments;
    /// forfeits the monotonicity guarantee.
    RandomDirichlet,
}

/// Tuning knobs for the fit. `Default` gives desk-scale settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    /// Outer loop stops when the absolute log-likelihood change drops
    /// below this.
    pub epsilon_outer: f64,
    /// Inner loop stops when the absolute change in the fit criterion Q
    /// drops below this.
    pub epsilon_inner: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub n_restarts: usize,
    /// Root seed; every restart derives its own stream from it.
    pub seed: u64,
    pub init_strategy: InitStrategy,
    /// Entries are raised to at least this value after each multiplicative
    /// update, before renormalization, so updates cannot create absorbing
    /// zeros. Set to 0 to keep deliberate exact zeros frozen instead.
    pub zero_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epsilon_outer: 1e-4,
            epsilon_inner: 1e-6,
            max_outer_iters: 500,
            max_inner_iters: 200,
            n_restarts: 5,
            seed: 0,
            init_strategy: InitStrategy::WarmStartInner,
            zero_floor: 1e-12,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epsilon_outer", self.epsilon_outer),
            ("epsilon_inner", self.epsilon_inner),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be a positive finite number, got {v}"
                )));
            }
        }
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(Error::invalid("iteration caps must be positive"));
        }
        if self.n_restarts == 0 {
            return Err(Error::invalid("n_restarts must be positive"));
        }
        if !(self.zero_floor.is_finite() && self.zero_floor >= 0.0) {
            return Err(Error::invalid(format!(
                "zero_floor must be finite and nonnegative, got {}",
                self.zero_floor
            )));
        }
        Ok(())
    }
}

/// The M×K matrix of responsibility-weighted counts
/// `M_jk = Σ_i Y_ij t_ik`; its total mass equals the dataset total.
#[derive(Debug, Clone)]
pub struct WeightedCounts {
    values: Array2<f64>,
    mass: f64,
}

impl WeightedCounts {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let mut mass = 0.0;
        for &v in values.iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "weighted counts must be finite and nonnegative, got {v}"
                )));
            }
            mass += v;
        }
        if mass <= 0.0 {
            return Err(Error::invalid("weighted counts have no mass"));
        }
        Ok(WeightedCounts { values, mass })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Total mass `Σ_jk M_jk`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }
}

/// Posterior responsibilities under the current model: a row-wise softmax of
/// the component log scores. Errors with the row index if some observation
/// is impossible under every component.
pub fn e_step(data: &CountDataset, model: &FactoredMixture) -> Result<Responsibilities> {
    let (resp, _) = e_step_with_loglik(data, model)?;
    Ok(resp)
}

/// E-step and log-likelihood from one pass over the score matrix.
pub(crate) fn e_step_with_loglik(
    data: &CountDataset,
    model: &FactoredMixture,
) -> Result<(Responsibilities, f64)> {
    let (values, loglik) = posterior_and_loglik(data, model.weights(), model.theta())?;
    Ok((Responsibilities::new(values)?, loglik))
}

/// Mixture weights from responsibilities: column means, renormalized.
pub fn update_weights(resp: &Responsibilities) -> Array1<f64> {
    let n = resp.n() as f64;
    let mut p = resp.values().sum_axis(Axis(0)) / n;
    let total: f64 = p.sum();
    p.mapv_inplace(|v| v / total);
    p
}

/// Responsibility-weighted counts `M_jk = Σ_i Y_ij t_ik` as a matrix product.
pub fn weighted_counts(data: &CountDataset, resp: &Responsibilities) -> Result<WeightedCounts> {
    if resp.n() != data.n() {
        return Err(Error::dim(
            "weighted counts",
            format!("{} rows", data.n()),
            format!("{} rows", resp.n()),
        ));
    }
    let values = data.counts_f().t().dot(resp.values());
    WeightedCounts::new(values)
}

/// Outcome of the inner multiplicative minimization.
#[derive(Debug, Clone)]
pub struct MStepOutcome {
    pub dictionary: Array2<f64>,
    pub loadings: Array2<f64>,
    /// Generalized Kullback–Leibler divergence D(M‖ΦΛ) before the first
    /// update and after each full multiplicative iteration; non-increasing.
    pub divergence_trace: Vec<f64>,
    /// Number of full multiplicative iterations performed.
    pub iterations: usize,
    pub converged: bool,
}

/// Elementwise `mc/θ` with the convention that entries where `mc = 0`
/// contribute 0 regardless of θ.
fn ratio_matrix(mc: &Array2<f64>, theta: &Array2<f64>) -> Array2<f64> {
    Zip::from(mc)
        .and(theta)
        .map_collect(|&m, &t| if m == 0.0 { 0.0 } else { m / t })
}

/// `Σ_jk mc_jk ln θ_jk` over entries with `mc > 0` (the part of the fit
/// criterion that moves during the inner loop).
fn q_criterion(mc: &Array2<f64>, theta: &Array2<f64>) -> f64 {
    Zip::from(mc)
        .and(theta)
        .fold(0.0, |acc, &m, &t| if m > 0.0 { acc + m * t.ln() } else { acc })
}

/// Raise entries to at least `floor` (no-op when `floor` is 0), then scale
/// every column to sum 1. Errors if a column has no mass or a non-finite
/// entry appears.
fn floor_and_normalize_columns(matrix: &mut Array2<f64>, floor: f64, what: &str) -> Result<()> {
    if floor > 0.0 {
        matrix.mapv_inplace(|v| v.max(floor));
    }
    for (j, mut col) in matrix.columns_mut().into_iter().enumerate() {
        let sum: f64 = col.sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(Error::invalid(format!(
                "{what} column {j} has mass {sum} after an update"
            )));
        }
        col.mapv_inplace(|v| v / sum);
    }
    Ok(())
}

fn any_non_finite(matrix: &Array2<f64>) -> bool {
    matrix.iter().any(|v| !v.is_finite())
}

/// Constrained KL-NMF by multiplicative updates: approximately minimizes the
/// generalized KL divergence `D(mc ‖ ΦΛ)` over column-stochastic factors,
/// starting from `(dictionary0, loadings0)`.
///
/// Each iteration rescales the loadings by the ratio statistic
/// `Σ_j Φ_jh mc_jk/(ΦΛ)_jk / Σ_j Φ_jh` and renormalizes loadings columns,
/// then rescales the dictionary by `Σ_k Λ_hk mc_jk/(ΦΛ)_jk / Σ_k Λ_hk` and
/// renormalizes dictionary columns. Normalizing columns (rather than rows)
/// keeps every iterate inside the column-stochastic parameter space, which
/// is what makes the divergence trace non-increasing and the outer EM loop
/// monotone. A final compensated rescaling (dictionary column sums absorbed
/// into loadings rows, then loadings columns re-scaled to 1) leaves the
/// product unchanged up to rounding and makes the invariants exact.
///
/// Starting factors must be nonnegative with column sums 1; entries equal to
/// exactly 0 stay 0 under multiplicative updates, which callers can use
/// deliberately (a loadings matrix pinned to the identity reduces the step
/// to the unrestricted closed-form M-step). For unconstrained optimization
/// pass strictly positive factors.
pub fn multiplicative_m_step(
    target: &WeightedCounts,
    dictionary0: ArrayView2<f64>,
    loadings0: ArrayView2<f64>,
    cfg: &FitConfig,
) -> Result<MStepOutcome> {
    cfg.validate()?;
    let (m, k) = (target.m(), target.k());
    let (dm, h) = dictionary0.dim();
    let (lh, lk) = loadings0.dim();
    if dm != m || lk != k || lh != h {
        return Err(Error::dim(
            "multiplicative M-step",
            format!("dictionary {m}x{h}, loadings {h}x{k}"),
            format!("dictionary {dm}x{h}, loadings {lh}x{lk}"),
        ));
    }
    for (name, matrix) in [("dictionary", dictionary0.view()), ("loadings", loadings0.view())] {
        for (j, col) in matrix.columns().into_iter().enumerate() {
            let mut sum = 0.0;
            for &v in col.iter() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::invalid(format!(
                        "initial {name} column {j} has entry {v}; initialization must be \
                         nonnegative and finite"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-8 {
                return Err(Error::invalid(format!(
                    "initial {name} column {j} sums to {sum}; initialization must be \
                     column-stochastic"
                )));
            }
        }
    }

    let mc = target.values();
    let mut phi = dictionary0.to_owned();
    let mut lam = loadings0.to_owned();

    // Constant part of D(mc‖θ): Σ (mc ln mc − mc) over positive entries.
    let d_const: f64 = mc
        .iter()
        .map(|&v| if v > 0.0 { v * v.ln() - v } else { 0.0 })
        .sum();
    let divergence = |theta: &Array2<f64>, q: f64| d_const + theta.sum() - q;

    let mut theta = phi.dot(&lam);
    let mut q_prev = q_criterion(mc, &theta);
    let mut trace = vec![divergence(&theta, q_prev)];
    if !trace[0].is_finite() {
        return Err(Error::NumericalFailure {
            iteration: 0,
            message: format!(
                "divergence at the initial point is {}; the target has counts where the \
                 initial product is zero",
                trace[0]
            ),
        });
    }

    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=cfg.max_inner_iters {
        // Loadings update.
        let ratio = ratio_matrix(mc, &theta);
        let numer = phi.t().dot(&ratio); // H×K
        let phi_col_mass = phi.sum_axis(Axis(0)); // H
        Zip::from(&mut lam)
            .and(&numer)
            .and_broadcast(&phi_col_mass.view().insert_axis(Axis(1)))
            .for_each(|l, &num, &mass| *l *= num / mass);
        floor_and_normalize_columns(&mut lam, cfg.zero_floor, "loadings").map_err(|e| {
            Error::NumericalFailure {
                iteration: it,
                message: e.to_string(),
            }
        })?;

        // Dictionary update against the refreshed product.
        theta = phi.dot(&lam);
        let ratio = ratio_matrix(mc, &theta);
        let numer = ratio.dot(&lam.t()); // M×H
        let lam_row_mass = lam.sum_axis(Axis(1)); // H
        Zip::from(&mut phi)
            .and(&numer)
            .and_broadcast(&lam_row_mass.view().insert_axis(Axis(0)))
            .for_each(|f, &num, &mass| {
                // A loadings row with no mass means the word is unused; its
                // profile carries no information, so leave it unchanged.
                if mass > 0.0 {
                    *f *= num / mass;
                }
            });
        floor_and_normalize_columns(&mut phi, cfg.zero_floor, "dictionary").map_err(|e| {
            Error::NumericalFailure {
                iteration: it,
                message: e.to_string(),
            }
        })?;

        if any_non_finite(&phi) || any_non_finite(&lam) {
            return Err(Error::NumericalFailure {
                iteration: it,
                message: "non-finite factor entry after multiplicative update".into(),
            });
        }

        theta = phi.dot(&lam);
        let q = q_criterion(mc, &theta);
        let d = divergence(&theta, q);
        if !d.is_finite() {
            return Err(Error::NumericalFailure {
                iteration: it,
                message: format!("divergence became {d}"),
            });
        }
        trace.push(d);
        iterations = it;
        if (q - q_prev).abs() < cfg.epsilon_inner {
            converged = true;
            break;
        }
        q_prev = q;
    }

    // Compensated renormalization: absorb dictionary column sums into the
    // matching loadings rows (product-preserving), then scale loadings
    // columns to 1. Under column normalization both factors are already
    // stochastic, so this only removes accumulated rounding.
    let phi_col_mass = phi.sum_axis(Axis(0));
    for (h_idx, mut col) in phi.columns_mut().into_iter().enumerate() {
        let s = phi_col_mass[h_idx];
        col.mapv_inplace(|v| v / s);
    }
    for (h_idx, mut row) in lam.rows_mut().into_iter().enumerate() {
        let s = phi_col_mass[h_idx];
        row.mapv_inplace(|v| v * s);
    }
    floor_and_normalize_columns(&mut lam, 0.0, "loadings").map_err(|e| Error::NumericalFailure {
        iteration: iterations,
        message: e.to_string(),
    })?;

    Ok(MStepOutcome {
        dictionary: phi,
        loadings: lam,
        divergence_trace: trace,
        iterations,
        converged,
    })
}

/// One restart's outcome before report assembly.
struct SingleFit {
    model: FactoredMixture,
    loglik: f64,
    trace: Vec<f64>,
    converged: bool,
}

/// Column-stochastic matrix with columns drawn uniformly from the simplex.
pub(crate) fn random_stochastic_matrix(
    rows: usize,
    cols: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let mut out = Array2::zeros((rows, cols));
    for mut col in out.columns_mut() {
        let mut sum = 0.0;
        for v in col.iter_mut() {
            // Exp(1) draws normalized over the column are a symmetric
            // Dirichlet(1) sample; reject the (measure-zero) exact zeros so
            // initializations stay strictly positive.
            let mut e = 0.0;
            while e <= 0.0 {
                let u: f64 = rng.random();
                e = -(1.0 - u).ln();
            }
            *v = e;
            sum += e;
        }
        col.mapv_inplace(|v| v / sum);
    }
    out
}

fn random_init(m: usize, h: usize, k: usize, rng: &mut ChaCha8Rng) -> (Array1<f64>, Array2<f64>, Array2<f64>) {
    let weights = Array1::from_elem(k, 1.0 / k as f64);
    let dictionary = random_stochastic_matrix(m, h, rng);
    let loadings = random_stochastic_matrix(h, k, rng);
    (weights, dictionary, loadings)
}

/// Run one EM chain from the given starting point. `rng` continues the
/// restart's stream (consumed only by the random-dirichlet inner strategy).
fn run_single(
    data: &CountDataset,
    weights0: Array1<f64>,
    dictionary0: Array2<f64>,
    loadings0: Array2<f64>,
    cfg: &FitConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SingleFit> {
    let h = dictionary0.ncols();
    let k = loadings0.ncols();
    let mut weights = weights0;
    let mut phi = dictionary0;
    let mut lam = loadings0;

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut model = FactoredMixture::new(weights.clone(), phi.clone(), lam.clone())?;
    loop {
        let (resp, loglik) = e_step_with_loglik(data, &model)?;
        if let Some(&prev) = trace.last() {
            trace.push(loglik);
            if (loglik - prev).abs() < cfg.epsilon_outer {
                converged = true;
                break;
            }
        } else {
            trace.push(loglik);
        }
        let outer_done = trace.len() - 1; // EM updates performed so far
        if outer_done == cfg.max_outer_iters {
            break;
        }

        weights = update_weights(&resp);
        let mc = weighted_counts(data, &resp)?;
        let (phi0, lam0) = match cfg.init_strategy {
            InitStrategy::WarmStartInner => (phi.view(), lam.view()),
            InitStrategy::RandomDirichlet => {
                phi = random_stochastic_matrix(data.m(), h, rng);
                lam = random_stochastic_matrix(h, k, rng);
                (phi.view(), lam.view())
            }
        };
        let outcome = multiplicative_m_step(&mc, phi0, lam0, cfg)?;
        log::debug!(
            "outer iteration {}: loglik {loglik:.6}, inner iterations {}",
            trace.len(),
            outcome.iterations
        );
        phi = outcome.dictionary;
        lam = outcome.loadings;
        model = FactoredMixture::new(weights.clone(), phi.clone(), lam.clone())?;
    }

    let loglik = *trace.last().expect("trace has at least the initial point");
    Ok(SingleFit {
        model,
        loglik,
        trace,
        converged,
    })
}

fn pick_best(
    runs: Vec<Result<SingleFit>>,
    attempted: usize,
) -> Result<SingleFit> {
    let mut best: Option<SingleFit> = None;
    let mut failures = 0usize;
    let mut last_error = String::new();
    for run in runs {
        match run {
            Ok(fit) if fit.loglik.is_finite() => {
                let better = best
                    .as_ref()
                    .map(|b| fit.loglik > b.loglik)
                    .unwrap_or(true);
                if better {
                    best = Some(fit);
                }
            }
            Ok(fit) => {
                failures += 1;
                last_error = format!("restart finished with log-likelihood {}", fit.loglik);
            }
            Err(e) => {
                failures += 1;
                last_error = e.to_string();
            }
        }
    }
    if failures > 0 {
        log::warn!("{failures} of {attempted} restarts failed; best finite result kept");
    }
    best.ok_or(Error::AllRestartsFailed {
        attempted,
        last_error,
    })
}

fn build_report(fit: SingleFit, data: &CountDataset, h: usize, cfg: &FitConfig) -> Result<FitReport> {
    let k = fit.model.k();
    let dof = degrees_of_freedom(data.m(), h, k)?;
    let (aic, bic) = criteria_from_dof(fit.loglik, dof, data.total() as f64);
    Ok(FitReport {
        outer_iterations: fit.trace.len() - 1,
        loglik: fit.loglik,
        loglik_trace: fit.trace,
        converged: fit.converged,
        dof,
        aic,
        bic,
        seed: cfg.seed,
        restarts_tried: cfg.n_restarts,
        model: fit.model,
    })
}

fn check_fit_dims(data: &CountDataset, k: usize, h: usize) -> Result<()> {
    if h == 0 || h > k {
        return Err(Error::invalid(format!(
            "H must satisfy 1 <= H <= K, got H={h}, K={k}"
        )));
    }
    if k > data.n() {
        return Err(Error::invalid(format!(
            "K={k} exceeds the number of rows n={}",
            data.n()
        )));
    }
    if h > data.m() {
        return Err(Error::invalid(format!(
            "H={h} exceeds the feature dimension M={}",
            data.m()
        )));
    }
    Ok(())
}

/// Fit a K-component mixture with an H-dimensional dictionary by multi-start
/// EM; returns the report of the restart with the best final log-likelihood.
/// Restarts draw independent seeded streams and may run in parallel; a
/// restart that fails numerically is discarded, and the fit errors only if
/// every restart fails.
pub fn fit(data: &CountDataset, k: usize, h: usize, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    check_fit_dims(data, k, h)?;
    let runs: Vec<Result<SingleFit>> = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::stream_rng(cfg.seed, "nmf-em-restart", r as u64);
            let (weights, dictionary, loadings) = random_init(data.m(), h, k, &mut rng);
            run_single(data, weights, dictionary, loadings, cfg, &mut rng)
        })
        .collect();
    let best = pick_best(runs, cfg.n_restarts)?;
    build_report(best, data, h, cfg)
}

/// Fit a single EM chain from an explicit starting model (no restarts).
/// Useful for warm starts and for pinning the loadings: exact zeros in the
/// starting factors are frozen by the multiplicative updates when
/// `cfg.zero_floor` is 0.
pub fn fit_from(data: &CountDataset, init: &FactoredMixture, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    check_fit_dims(data, init.k(), init.h())?;
    if init.m() != data.m() {
        return Err(Error::dim(
            "fit_from",
            format!("M={}", data.m()),
            format!("M={}", init.m()),
        ));
    }
    let mut rng = seed::stream_rng(cfg.seed, "nmf-em-explicit-init", 0);
    let fit = run_single(
        data,
        init.weights().clone(),
        init.dictionary().clone(),
        init.loadings().clone(),
        cfg,
        &mut rng,
    )?;
    let h = init.h();
    let mut report = build_report(fit, data, h, cfg)?;
    report.restarts_tried = 1;
    Ok(report)
}
