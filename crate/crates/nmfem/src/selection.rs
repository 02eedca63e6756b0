//! Model-size selection: penalized criteria, sweeps over K and H, and a
//! data-driven slope heuristic for picking the elbow of a sweep.

use std::io;

use serde::{Deserialize, Serialize};

use crate::baselines::fit_plain_em;
use crate::dataset::CountDataset;
use crate::em::{fit, fit_from, FitConfig};
use crate::error::{Error, Result};
use crate::model::{FactoredMixture, FitReport};
use crate::seed;

/// Penalized criteria from a log-likelihood and a parameter count:
/// `aic = ℓ − dof/2`, `bic = ℓ − dof·ln(N)/2`, with `N` the total event
/// count behind ℓ. Larger is better for both.
pub fn criteria_from_dof(loglik: f64, dof: usize, total_count: f64) -> (f64, f64) {
    let d = dof as f64;
    let aic = loglik - d / 2.0;
    let bic = loglik - d * total_count.ln() / 2.0;
    (aic, bic)
}

/// Penalized criteria for a factored mixture of the given shape.
/// `total_count` is the total number of recorded events and may be any real
/// value ≥ 1.
pub fn criteria(loglik: f64, m: usize, h: usize, k: usize, total_count: f64) -> Result<(f64, f64)> {
    if !total_count.is_finite() || total_count < 1.0 {
        return Err(Error::invalid(format!(
            "total_count must be a finite value >= 1, got {total_count}"
        )));
    }
    let dof = crate::model::degrees_of_freedom(m, h, k)?;
    Ok(criteria_from_dof(loglik, dof, total_count))
}

/// One fitted point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub k: usize,
    pub h: usize,
    pub loglik: f64,
    pub dof: usize,
    pub aic: f64,
    pub bic: f64,
    pub seed: u64,
}

/// Records of a sweep, unique per (K, H) pair, in sweep order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    records: Vec<SweepRecord>,
}

const SWEEP_CSV_HEADER: &str = "K,H,loglik,dof,aic,bic,seed";

impl SweepTable {
    pub fn new(records: Vec<SweepRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("sweep table has no records".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &records {
            if !seen.insert((r.k, r.h)) {
                return Err(Error::invalid(format!(
                    "duplicate sweep record for K={}, H={}",
                    r.k, r.h
                )));
            }
        }
        Ok(SweepTable { records })
    }

    pub fn records(&self) -> &[SweepRecord] {
        &self.records
    }

    /// Record with the highest AIC (first on exact ties).
    pub fn best_by_aic(&self) -> &SweepRecord {
        self.records
            .iter()
            .reduce(|best, r| if r.aic > best.aic { r } else { best })
            .expect("table is never empty")
    }

    /// Record with the highest BIC (first on exact ties).
    pub fn best_by_bic(&self) -> &SweepRecord {
        self.records
            .iter()
            .reduce(|best, r| if r.bic > best.bic { r } else { best })
            .expect("table is never empty")
    }

    pub fn to_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWEEP_CSV_HEADER.split(','))?;
        for r in &self.records {
            w.write_record(&[
                r.k.to_string(),
                r.h.to_string(),
                format!("{:?}", r.loglik),
                r.dof.to_string(),
                format!("{:?}", r.aic),
                format!("{:?}", r.bic),
                r.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv<R: io::Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        {
            let headers = reader.headers()?;
            let expected: Vec<&str> = SWEEP_CSV_HEADER.split(',').collect();
            if headers.iter().collect::<Vec<_>>() != expected {
                return Err(Error::invalid(format!(
                    "sweep CSV header must be \"{SWEEP_CSV_HEADER}\", got \"{}\"",
                    headers.iter().collect::<Vec<_>>().join(",")
                )));
            }
        }
        let mut records = Vec::new();
        for (idx, row) in reader.records().enumerate() {
            let row = row?;
            let line = idx + 2;
            let field = |i: usize| -> Result<&str> {
                row.get(i)
                    .ok_or_else(|| Error::invalid(format!("line {line}: missing column {i}")))
            };
            let parse_usize = |s: &str, name: &str| -> Result<usize> {
                s.parse()
                    .map_err(|_| Error::invalid(format!("line {line}: bad {name} value {s:?}")))
            };
            let parse_f64 = |s: &str, name: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::invalid(format!("line {line}: bad {name} value {s:?}")))
            };
            records.push(SweepRecord {
                k: parse_usize(field(0)?, "K")?,
                h: parse_usize(field(1)?, "H")?,
                loglik: parse_f64(field(2)?, "loglik")?,
                dof: parse_usize(field(3)?, "dof")?,
                aic: parse_f64(field(4)?, "aic")?,
                bic: parse_f64(field(5)?, "bic")?,
                seed: field(6)?
                    .parse()
                    .map_err(|_| Error::invalid(format!("line {line}: bad seed value")))?,
            });
        }
        SweepTable::new(records)
    }
}

fn check_axis_values(values: &[usize], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyInput(format!("{what} range is empty")));
    }
    for pair in values.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::invalid(format!(
                "{what} range must be strictly ascending, got {} after {}",
                pair[1], pair[0]
            )));
        }
    }
    Ok(())
}

/// Fit the unrestricted mixture at every K in `k_range` (strictly
/// ascending). Each K derives its own seed stream from `cfg.seed`. A K whose
/// fit fails is skipped with a warning; the sweep errors only if every K
/// fails.
pub fn sweep_k(data: &CountDataset, k_range: &[usize], cfg: &FitConfig) -> Result<SweepTable> {
    cfg.validate()?;
    check_axis_values(k_range, "K")?;
    let mut records = Vec::new();
    let mut last_error = String::new();
    for &k in k_range {
        let cfg_k = FitConfig {
            seed: seed::derive_seed(cfg.seed, "sweep-k", k as u64),
            ..cfg.clone()
        };
        match fit_plain_em(data, k, &cfg_k) {
            Ok(report) => records.push(SweepRecord {
                k,
                h: report.model.h(),
                loglik: report.loglik,
                dof: report.dof,
                aic: report.aic,
                bic: report.bic,
                seed: cfg_k.seed,
            }),
            Err(e) => {
                log::warn!("K={k} fit failed and is skipped: {e}");
                last_error = e.to_string();
            }
        }
    }
    if records.is_empty() {
        return Err(Error::AllRestartsFailed {
            attempted: k_range.len(),
            last_error,
        });
    }
    SweepTable::new(records)
}

/// Grow a fitted model to a larger dictionary: new words get the uniform
/// profile and a small (1e-6) share of every mixture component, so the
/// enlarged model scores almost identically and a further fit can only
/// improve it.
fn pad_model(model: &FactoredMixture, h_new: usize) -> Result<FactoredMixture> {
    use ndarray::Array2;
    let (m, h_old, k) = (model.m(), model.h(), model.k());
    if h_new <= h_old {
        return Err(Error::invalid(format!(
            "pad target H={h_new} must exceed the model's H={h_old}"
        )));
    }
    let mut dictionary = Array2::zeros((m, h_new));
    dictionary
        .slice_mut(ndarray::s![.., ..h_old])
        .assign(model.dictionary());
    dictionary
        .slice_mut(ndarray::s![.., h_old..])
        .fill(1.0 / m as f64);

    let mut loadings = Array2::from_elem((h_new, k), 1e-6);
    loadings
        .slice_mut(ndarray::s![..h_old, ..])
        .assign(model.loadings());
    for mut col in loadings.columns_mut() {
        let sum: f64 = col.sum();
        col.mapv_inplace(|v| v / sum);
    }
    FactoredMixture::new(model.weights().clone(), dictionary, loadings)
}

/// Fit the factored mixture at fixed K for every H in `h_range` (strictly
/// ascending, each in `1..=k`). Besides its own multi-start fit, every H
/// after the first also tries a chain warm-started from the previous H's
/// best model grown by `pad_model`, and keeps whichever scores higher; this
/// keeps the sweep's tail from sagging below smaller-H fits.
pub fn sweep_h(data: &CountDataset, k: usize, h_range: &[usize], cfg: &FitConfig) -> Result<SweepTable> {
    cfg.validate()?;
    check_axis_values(h_range, "H")?;
    if let Some(&last) = h_range.last() {
        if last > k {
            return Err(Error::invalid(format!(
                "H range reaches {last}, above K={k}"
            )));
        }
    }
    if h_range[0] == 0 {
        return Err(Error::invalid("H range must start at 1 or above"));
    }

    let mut records = Vec::new();
    let mut last_error = String::new();
    let mut prev_best: Option<FitReport> = None;
    for &h in h_range {
        let cfg_h = FitConfig {
            seed: seed::derive_seed(cfg.seed, "sweep-h", h as u64),
            ..cfg.clone()
        };
        let mut candidates: Vec<Result<FitReport>> = vec![fit(data, k, h, &cfg_h)];
        if let Some(prev) = prev_best.as_ref().filter(|p| p.model.h() < h) {
            match pad_model(&prev.model, h) {
                Ok(init) => candidates.push(fit_from(data, &init, &cfg_h)),
                Err(e) => log::debug!("could not grow the previous model to H={h}: {e}"),
            }
        }

        let mut winner: Option<FitReport> = None;
        for candidate in candidates {
            match candidate {
                Ok(report) if report.loglik.is_finite() => {
                    let better = winner
                        .as_ref()
                        .map(|w| report.loglik > w.loglik)
                        .unwrap_or(true);
                    if better {
                        winner = Some(report);
                    }
                }
                Ok(report) => {
                    last_error =
                        format!("H={h} chain finished with log-likelihood {}", report.loglik);
                }
                Err(e) => {
                    last_error = e.to_string();
                }
            }
        }

        match winner {
            Some(report) => {
                records.push(SweepRecord {
                    k,
                    h,
                    loglik: report.loglik,
                    dof: report.dof,
                    aic: report.aic,
                    bic: report.bic,
                    seed: cfg_h.seed,
                });
                prev_best = Some(report);
            }
            None => {
                log::warn!("H={h} fit failed and is skipped: {last_error}");
            }
        }
    }
    if records.is_empty() {
        return Err(Error::AllRestartsFailed {
            attempted: h_range.len(),
            last_error,
        });
    }
    SweepTable::new(records)
}

/// Which model-size axis a sweep varied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    K,
    H,
}

impl SweepAxis {
    fn value_of(self, r: &SweepRecord) -> usize {
        match self {
            SweepAxis::K => r.k,
            SweepAxis::H => r.h,
        }
    }
}

/// One sweep point with its penalized log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedPoint {
    pub value: usize,
    pub loglik: f64,
    pub dof: usize,
    pub penalized: f64,
}

/// Outcome of the slope heuristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeSelection {
    /// Axis value with the highest penalized log-likelihood.
    pub chosen: usize,
    /// Slope of the fitted linear tail (log-likelihood per parameter).
    pub slope: f64,
    pub intercept: f64,
    /// Axis value where the fitted linear region begins.
    pub linear_region_start: usize,
    pub penalized_values: Vec<PenalizedPoint>,
}

/// Pick a model size by the slope heuristic: find the longest/best-fitting
/// linear tail of log-likelihood versus parameter count (the suffix of at
/// least 4 points with the smallest residual standard error; ties prefer the
/// longer suffix), then maximize `ℓ − 2·slope·dof` over all points (ties
/// prefer the smaller axis value).
pub fn slope_select(table: &SweepTable, axis: SweepAxis) -> Result<SlopeSelection> {
    let records = table.records();
    let mut values: Vec<usize> = records.iter().map(|r| axis.value_of(r)).collect();
    let sorted = values.windows(2).all(|w| w[1] > w[0]);
    if !sorted {
        values.sort_unstable();
        let unique = values.windows(2).all(|w| w[1] > w[0]);
        if !unique {
            return Err(Error::invalid(
                "slope heuristic needs one record per axis value",
            ));
        }
        return Err(Error::invalid(
            "slope heuristic needs records in ascending axis order",
        ));
    }
    if records.len() < 4 {
        return Err(Error::InsufficientData {
            context: "slope heuristic".into(),
            needed: 4,
            got: records.len(),
        });
    }

    // Best linear tail: smallest residual standard error among suffixes of
    // length >= 4; near-ties (1e-9 relative) go to the longest suffix.
    let mut best: Option<(usize, f64, f64, f64)> = None; // (start, se, slope, intercept)
    for start in 0..=(records.len() - 4) {
        let tail = &records[start..];
        let n = tail.len() as f64;
        let mean_x = tail.iter().map(|r| r.dof as f64).sum::<f64>() / n;
        let mean_y = tail.iter().map(|r| r.loglik).sum::<f64>() / n;
        let sxx: f64 = tail
            .iter()
            .map(|r| {
                let d = r.dof as f64 - mean_x;
                d * d
            })
            .sum();
        if sxx <= 0.0 {
            return Err(Error::invalid(
                "slope heuristic needs distinct parameter counts",
            ));
        }
        let sxy: f64 = tail
            .iter()
            .map(|r| (r.dof as f64 - mean_x) * (r.loglik - mean_y))
            .sum();
        let slope = sxy / sxx;
        let intercept = mean_y - slope * mean_x;
        let ssr: f64 = tail
            .iter()
            .map(|r| {
                let resid = r.loglik - (intercept + slope * r.dof as f64);
                resid * resid
            })
            .sum();
        let se = (ssr / (n - 2.0)).sqrt();
        let better = match best {
            None => true,
            Some((_, best_se, _, _)) => se < best_se - 1e-9 * (1.0 + best_se.abs()),
        };
        if better {
            best = Some((start, se, slope, intercept));
        }
    }
    let (start, _, slope, intercept) = best.expect("at least one suffix was scored");

    let penalized_values: Vec<PenalizedPoint> = records
        .iter()
        .map(|r| PenalizedPoint {
            value: axis.value_of(r),
            loglik: r.loglik,
            dof: r.dof,
            penalized: r.loglik - 2.0 * slope * r.dof as f64,
        })
        .collect();
    let chosen = penalized_values
        .iter()
        .reduce(|best, p| if p.penalized > best.penalized { p } else { best })
        .expect("table is never empty")
        .value;

    Ok(SlopeSelection {
        chosen,
        slope,
        intercept,
        linear_region_start: axis.value_of(&records[start]),
        penalized_values,
    })
}
