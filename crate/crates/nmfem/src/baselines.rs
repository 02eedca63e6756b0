//! Reference methods the factored fit is compared against: an unrestricted
//! multinomial-mixture EM and Lloyd's k-means on row proportions.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use crate::dataset::CountDataset;
use crate::em::{random_stochastic_matrix, FitConfig};
use crate::error::{Error, Result};
use crate::likelihood::posterior_and_loglik;
use crate::model::{unrestricted_degrees_of_freedom, FactoredMixture, FitReport};
use crate::seed;
use crate::selection::criteria_from_dof;

fn identity_loadings(k: usize) -> Array2<f64> {
    Array2::from_shape_fn((k, k), |(i, j)| if i == j { 1.0 } else { 0.0 })
}

struct PlainFit {
    weights: Array1<f64>,
    theta: Array2<f64>,
    loglik: f64,
    trace: Vec<f64>,
    converged: bool,
}

fn run_plain_chain(
    data: &CountDataset,
    mut weights: Array1<f64>,
    mut theta: Array2<f64>,
    cfg: &FitConfig,
) -> Result<PlainFit> {
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    loop {
        let (resp, loglik) = posterior_and_loglik(data, &weights, &theta)?;
        if let Some(&prev) = trace.last() {
            trace.push(loglik);
            if (loglik - prev).abs() < cfg.epsilon_outer {
                converged = true;
                break;
            }
        } else {
            trace.push(loglik);
        }
        if trace.len() - 1 == cfg.max_outer_iters {
            break;
        }

        // Weights: responsibility column means.
        let n = data.n() as f64;
        weights = resp.sum_axis(Axis(0)) / n;
        let total: f64 = weights.sum();
        weights.mapv_inplace(|v| v / total);

        // Component profiles: column-normalized weighted counts. A component
        // that attracted no mass keeps its previous profile (its weight is
        // already effectively zero).
        let mc = data.counts_f().t().dot(&resp);
        for (c, col) in mc.columns().into_iter().enumerate() {
            let mass: f64 = col.sum();
            if mass > 0.0 {
                for (j, &v) in col.iter().enumerate() {
                    theta[(j, c)] = v / mass;
                }
            }
        }
    }
    let loglik = *trace.last().expect("trace has at least the initial point");
    Ok(PlainFit {
        weights,
        theta,
        loglik,
        trace,
        converged,
    })
}

fn plain_report(fit: PlainFit, data: &CountDataset, cfg: &FitConfig) -> Result<FitReport> {
    let k = fit.weights.len();
    let model = FactoredMixture::new(fit.weights, fit.theta, identity_loadings(k))?;
    let dof = unrestricted_degrees_of_freedom(data.m(), k)?;
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
        model,
    })
}

fn check_plain_dims(data: &CountDataset, k: usize) -> Result<()> {
    if k == 0 || k > data.n() {
        return Err(Error::invalid(format!(
            "K must satisfy 1 <= K <= n, got K={k}, n={}",
            data.n()
        )));
    }
    if k > data.m() {
        return Err(Error::invalid(format!(
            "K={k} exceeds the feature dimension M={}; the unrestricted model \
             stores profiles as a dictionary with K words",
            data.m()
        )));
    }
    Ok(())
}

/// Multi-start EM for the unrestricted multinomial mixture (component
/// profiles free on the simplex, no dictionary). The fitted model is
/// expressed with the profiles as dictionary words and identity loadings,
/// so downstream reporting treats both methods uniformly; its parameter
/// count is the unrestricted one.
pub fn fit_plain_em(data: &CountDataset, k: usize, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    check_plain_dims(data, k)?;
    let runs: Vec<Result<PlainFit>> = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::stream_rng(cfg.seed, "plain-em-restart", r as u64);
            let weights = Array1::from_elem(k, 1.0 / k as f64);
            let theta = random_stochastic_matrix(data.m(), k, &mut rng);
            run_plain_chain(data, weights, theta, cfg)
        })
        .collect();

    let mut best: Option<PlainFit> = None;
    let mut failures = 0usize;
    let mut last_error = String::new();
    for run in runs {
        match run {
            Ok(fit) if fit.loglik.is_finite() => {
                if best.as_ref().map(|b| fit.loglik > b.loglik).unwrap_or(true) {
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
        log::warn!(
            "{failures} of {} plain-EM restarts failed; best finite result kept",
            cfg.n_restarts
        );
    }
    let best = best.ok_or(Error::AllRestartsFailed {
        attempted: cfg.n_restarts,
        last_error,
    })?;
    plain_report(best, data, cfg)
}

/// One unrestricted-EM chain from an explicit starting point (no restarts).
pub fn fit_plain_em_from(
    data: &CountDataset,
    weights0: Array1<f64>,
    theta0: Array2<f64>,
    cfg: &FitConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    let k = weights0.len();
    check_plain_dims(data, k)?;
    if theta0.dim() != (data.m(), k) {
        return Err(Error::dim(
            "plain EM start",
            format!("{}x{k}", data.m()),
            format!("{}x{}", theta0.nrows(), theta0.ncols()),
        ));
    }
    let fit = run_plain_chain(data, weights0, theta0, cfg)?;
    let mut report = plain_report(fit, data, cfg)?;
    report.restarts_tried = 1;
    Ok(report)
}

/// Outcome of a k-means run on row proportions.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// K×M matrix of cluster centers in proportion space.
    pub centers: Array2<f64>,
    /// 1-based cluster label per row.
    pub labels: Vec<usize>,
    /// Total squared distance of rows to their centers.
    pub inertia: f64,
    /// Lloyd iterations of the winning restart.
    pub iterations: usize,
}

const KMEANS_MAX_ITERS: usize = 300;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Index of the nearest center; ties go to the lowest index.
fn nearest_center(point: &[f64], centers: &Array2<f64>) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.outer_iter().enumerate() {
        let d = squared_distance(point, center.as_slice().expect("row-major centers"));
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// Careful-seeding initialization: the first center is a uniform row draw,
/// each later center is drawn with probability proportional to the squared
/// distance to the nearest already-chosen center.
fn seed_centers(points: &Array2<f64>, k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Array2<f64> {
    use rand::Rng;
    let n = points.nrows();
    let m = points.ncols();
    let mut centers = Array2::zeros((k, m));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&points.row(first));

    let mut dist2: Vec<f64> = (0..n)
        .map(|i| {
            squared_distance(
                points.row(i).as_slice().expect("row-major points"),
                centers.row(0).as_slice().expect("row-major centers"),
            )
        })
        .collect();

    for c in 1..k {
        let total: f64 = dist2.iter().sum();
        let pick = if total > 0.0 {
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                acc += d;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // Every point coincides with a center already; any choice works.
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&points.row(pick));
        for (i, nearest) in dist2.iter_mut().enumerate() {
            let d = squared_distance(
                points.row(i).as_slice().expect("row-major points"),
                centers.row(c).as_slice().expect("row-major centers"),
            );
            if d < *nearest {
                *nearest = d;
            }
        }
    }
    centers
}

fn lloyd(points: &Array2<f64>, mut centers: Array2<f64>) -> (Array2<f64>, Vec<usize>, f64, usize) {
    let n = points.nrows();
    let m = points.ncols();
    let k = centers.nrows();
    let mut labels = vec![0usize; n];
    let mut iterations = 0;

    for it in 1..=KMEANS_MAX_ITERS {
        iterations = it;
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let (c, _) = nearest_center(
                points.row(i).as_slice().expect("row-major points"),
                &centers,
            );
            if *label != c + 1 {
                *label = c + 1;
                changed = true;
            }
        }

        let mut sums = Array2::<f64>::zeros((k, m));
        let mut counts = vec![0usize; k];
        for (i, &label) in labels.iter().enumerate() {
            counts[label - 1] += 1;
            let mut row = sums.row_mut(label - 1);
            row += &points.row(i);
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let inv = 1.0 / count as f64;
                let mut row = centers.row_mut(c);
                row.assign(&sums.row(c));
                row.mapv_inplace(|v| v * inv);
            } else {
                // Re-seed an empty cluster from the point farthest from its
                // own center, the standard repair.
                let mut far = 0usize;
                let mut far_d = -1.0;
                for (i, &label) in labels.iter().enumerate() {
                    let d = squared_distance(
                        points.row(i).as_slice().expect("row-major points"),
                        centers.row(label - 1).as_slice().expect("row-major centers"),
                    );
                    if d > far_d {
                        far_d = d;
                        far = i;
                    }
                }
                centers.row_mut(c).assign(&points.row(far));
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let (c, d) = nearest_center(
            points.row(i).as_slice().expect("row-major points"),
            &centers,
        );
        *label = c + 1;
        inertia += d;
    }
    (centers, labels, inertia, iterations)
}

/// Multi-start k-means on row proportions; keeps the restart with the
/// lowest inertia (earliest restart on exact ties).
pub fn fit_kmeans(
    data: &CountDataset,
    k: usize,
    seed: u64,
    n_restarts: usize,
) -> Result<KMeansResult> {
    if k == 0 || k > data.n() {
        return Err(Error::invalid(format!(
            "K must satisfy 1 <= K <= n, got K={k}, n={}",
            data.n()
        )));
    }
    if n_restarts == 0 {
        return Err(Error::invalid("n_restarts must be positive"));
    }
    let points = data.proportions();

    let runs: Vec<KMeansResult> = (0..n_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::stream_rng(seed, "kmeans-restart", r as u64);
            let centers = seed_centers(&points, k, &mut rng);
            let (centers, labels, inertia, iterations) = lloyd(&points, centers);
            KMeansResult {
                centers,
                labels,
                inertia,
                iterations,
            }
        })
        .collect();

    runs.into_iter()
        .reduce(|best, cand| if cand.inertia < best.inertia { cand } else { best })
        .ok_or(Error::AllRestartsFailed {
            attempted: n_restarts,
            last_error: "no k-means restart produced a result".into(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn labels(m: usize) -> Vec<String> {
        (0..m).map(|j| format!("f{j}")).collect()
    }

    fn tiny_config() -> FitConfig {
        FitConfig {
            n_restarts: 3,
            ..FitConfig::default()
        }
    }

    #[test]
    fn plain_em_single_component_is_empirical_frequencies() {
        let data = CountDataset::new(array![[5, 3, 2], [1, 7, 2], [4, 4, 2]], labels(3)).unwrap();
        let report = fit_plain_em(&data, 1, &tiny_config()).unwrap();
        let total = data.total() as f64;
        for j in 0..3 {
            let col_total: u64 = (0..3).map(|i| data.counts()[(i, j)]).sum();
            let expected = col_total as f64 / total;
            let got = report.model.theta()[(j, 0)];
            assert!((got - expected).abs() < 1e-9, "feature {j}: {got} vs {expected}");
        }
        assert_eq!(report.dof, 2);
        assert!(report.converged);
    }

    #[test]
    fn plain_em_trace_is_monotone_and_dof_is_unrestricted() {
        use rand::Rng;
        let mut rng = seed::stream_rng(7, "plain-test", 0);
        let mut counts = Array2::from_shape_fn((40, 6), |_| rng.random_range(0..9u64));
        for mut row in counts.rows_mut() {
            if row.iter().all(|&v| v == 0) {
                row[0] = 1;
            }
        }
        let data = CountDataset::new(counts, labels(6)).unwrap();
        let report = fit_plain_em(&data, 3, &tiny_config()).unwrap();
        for pair in report.loglik_trace.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-8,
                "log-likelihood decreased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
        assert_eq!(report.dof, unrestricted_degrees_of_freedom(6, 3).unwrap());
        assert_eq!(report.model.h(), 3, "profiles are recorded as K dictionary words");
        // Identity loadings: theta equals the dictionary.
        assert_eq!(report.model.theta(), report.model.dictionary());
    }

    #[test]
    fn plain_em_from_runs_single_chain() {
        let data = CountDataset::new(array![[4, 1], [1, 4], [3, 2]], labels(2)).unwrap();
        let weights0 = array![0.5, 0.5];
        let theta0 = array![[0.7, 0.3], [0.3, 0.7]];
        let report = fit_plain_em_from(&data, weights0, theta0, &FitConfig::default()).unwrap();
        assert_eq!(report.restarts_tried, 1);
        assert!(report.converged);
    }

    #[test]
    fn plain_em_rejects_bad_dimensions() {
        let data = CountDataset::new(array![[1, 1], [2, 2]], labels(2)).unwrap();
        assert!(fit_plain_em(&data, 0, &tiny_config()).is_err());
        assert!(fit_plain_em(&data, 3, &tiny_config()).is_err(), "K > n and K > M");
    }

    #[test]
    fn kmeans_single_cluster_center_is_mean_proportion() {
        let data = CountDataset::new(array![[2, 2], [1, 3], [3, 1]], labels(2)).unwrap();
        let result = fit_kmeans(&data, 1, 0, 2).unwrap();
        // Proportions are (0.5,0.5), (0.25,0.75), (0.75,0.25); mean (0.5,0.5).
        assert!((result.centers[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((result.centers[(0, 1)] - 0.5).abs() < 1e-12);
        assert!(result.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn kmeans_separates_two_obvious_groups() {
        // Rows 0..3 concentrate on feature 0, rows 3..6 on feature 1.
        let data = CountDataset::new(
            array![[9, 1], [8, 2], [9, 2], [1, 9], [2, 8], [1, 8]],
            labels(2),
        )
        .unwrap();
        let result = fit_kmeans(&data, 2, 11, 4).unwrap();
        assert_eq!(result.labels[0], result.labels[1]);
        assert_eq!(result.labels[1], result.labels[2]);
        assert_eq!(result.labels[3], result.labels[4]);
        assert_eq!(result.labels[4], result.labels[5]);
        assert_ne!(result.labels[0], result.labels[3]);
    }

    #[test]
    fn kmeans_k_equals_n_distinct_points_has_zero_inertia() {
        let data = CountDataset::new(array![[9, 1], [5, 5], [1, 9]], labels(2)).unwrap();
        let result = fit_kmeans(&data, 3, 3, 8).unwrap();
        assert!(result.inertia < 1e-24, "inertia {}", result.inertia);
        let mut sorted = result.labels.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![1, 2, 3]);
    }

    #[test]
    fn kmeans_duplicated_rows_share_labels() {
        let data = CountDataset::new(
            array![[9, 1], [9, 1], [1, 9], [1, 9]],
            labels(2),
        )
        .unwrap();
        let result = fit_kmeans(&data, 2, 5, 4).unwrap();
        assert_eq!(result.labels[0], result.labels[1]);
        assert_eq!(result.labels[2], result.labels[3]);
        assert_ne!(result.labels[0], result.labels[2]);
        assert!(result.inertia < 1e-24);
    }

    #[test]
    fn kmeans_modest_restarts_match_exhaustive_restarts() {
        use rand::Rng;
        let mut rng = seed::stream_rng(21, "kmeans-ref", 0);
        let mut counts = Array2::from_shape_fn((24, 4), |(i, j)| {
            // Three planted groups with distinct dominant features.
            let group = i / 8;
            if j == group {
                20 + rng.random_range(0..5u64)
            } else {
                rng.random_range(0..3u64)
            }
        });
        for mut row in counts.rows_mut() {
            if row.iter().all(|&v| v == 0) {
                row[0] = 1;
            }
        }
        let data = CountDataset::new(counts, labels(4)).unwrap();
        let modest = fit_kmeans(&data, 3, 9, 5).unwrap();
        let exhaustive = fit_kmeans(&data, 3, 9, 200).unwrap();
        assert!(
            (modest.inertia - exhaustive.inertia).abs() < 1e-9,
            "modest {} vs exhaustive {}",
            modest.inertia,
            exhaustive.inertia
        );
    }

    #[test]
    fn kmeans_rejects_bad_arguments() {
        let data = CountDataset::new(array![[1, 1], [2, 2]], labels(2)).unwrap();
        assert!(fit_kmeans(&data, 0, 0, 1).is_err());
        assert!(fit_kmeans(&data, 3, 0, 1).is_err());
        assert!(fit_kmeans(&data, 1, 0, 0).is_err());
    }
}
