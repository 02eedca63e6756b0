//! Validated count matrices and their CSV serialization.

use std::collections::HashSet;
use std::io;

use ndarray::Array2;

use crate::error::{Error, Result};

/// ln(x!) via the log-gamma function; exact enough for counts of any size.
pub(crate) fn ln_factorial(x: u64) -> f64 {
    libm::lgamma(x as f64 + 1.0)
}

/// An immutable n×M matrix of nonnegative integer counts, one row per
/// individual and one column per feature, with derived quantities cached at
/// construction: row totals, the grand total, a float copy of the counts for
/// linear algebra, and the per-row log multinomial coefficient
/// `ln(N_i!) − Σ_j ln(Y_ij!)`.
#[derive(Debug, Clone)]
pub struct CountDataset {
    counts: Array2<u64>,
    counts_f: Array2<f64>,
    row_totals: Vec<u64>,
    total: u64,
    feature_labels: Vec<String>,
    log_coefficients: Vec<f64>,
}

impl CountDataset {
    /// Validate and wrap a count matrix.
    ///
    /// Requirements: at least one row, at least two feature columns, one
    /// label per column with no duplicates, and at least one positive entry
    /// in every row.
    pub fn new(counts: Array2<u64>, feature_labels: Vec<String>) -> Result<Self> {
        let (n, m) = counts.dim();
        if n == 0 {
            return Err(Error::EmptyInput("count matrix has no rows".into()));
        }
        if m < 2 {
            return Err(Error::invalid(format!(
                "count matrix needs at least 2 feature columns, got {m}"
            )));
        }
        if feature_labels.len() != m {
            return Err(Error::dim(
                "feature labels",
                format!("{m} labels"),
                format!("{} labels", feature_labels.len()),
            ));
        }
        let mut seen = HashSet::with_capacity(m);
        for label in &feature_labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::invalid(format!("duplicate feature label {label:?}")));
            }
        }

        let mut row_totals = Vec::with_capacity(n);
        let mut log_coefficients = Vec::with_capacity(n);
        let mut total: u64 = 0;
        for (i, row) in counts.outer_iter().enumerate() {
            let row_total: u64 = row.iter().sum();
            if row_total == 0 {
                return Err(Error::invalid(format!("row {i} has no positive counts")));
            }
            let coeff =
                ln_factorial(row_total) - row.iter().map(|&y| ln_factorial(y)).sum::<f64>();
            row_totals.push(row_total);
            log_coefficients.push(coeff);
            total += row_total;
        }

        let counts_f = counts.mapv(|c| c as f64);
        Ok(CountDataset {
            counts,
            counts_f,
            row_totals,
            total,
            feature_labels,
            log_coefficients,
        })
    }

    /// Convenience constructor from row vectors.
    pub fn from_rows(rows: Vec<Vec<u64>>, feature_labels: Vec<String>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyInput("count matrix has no rows".into()));
        }
        let m = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::dim(
                    format!("row {i}"),
                    format!("{m} entries"),
                    format!("{} entries", row.len()),
                ));
            }
        }
        let flat: Vec<u64> = rows.into_iter().flatten().collect();
        let counts = Array2::from_shape_vec((n, m), flat)
            .expect("row-major reshape of validated rows cannot fail");
        CountDataset::new(counts, feature_labels)
    }

    /// Number of individuals (rows).
    pub fn n(&self) -> usize {
        self.counts.nrows()
    }

    /// Number of features (columns).
    pub fn m(&self) -> usize {
        self.counts.ncols()
    }

    /// The raw integer counts.
    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    /// The counts as `f64`, cached for matrix products.
    pub fn counts_f(&self) -> &Array2<f64> {
        &self.counts_f
    }

    /// Per-row totals `N_i`.
    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }

    /// Grand total `N = Σ_i N_i`.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Column labels.
    pub fn feature_labels(&self) -> &[String] {
        &self.feature_labels
    }

    /// Per-row log multinomial coefficients `ln(N_i!) − Σ_j ln(Y_ij!)`.
    pub fn log_coefficients(&self) -> &[f64] {
        &self.log_coefficients
    }

    /// Rows normalized to proportions `Y_i / N_i` (used by k-means).
    pub fn proportions(&self) -> Array2<f64> {
        let mut out = self.counts_f.clone();
        for (mut row, &total) in out.outer_iter_mut().zip(&self.row_totals) {
            row.mapv_inplace(|v| v / total as f64);
        }
        out
    }
}

/// Write a count matrix as CSV: a row-key column named `key_column` followed
/// by one column per feature label. `row_ids` supplies the key of each row.
pub fn write_matrix_csv<W: io::Write>(
    out: W,
    data: &CountDataset,
    key_column: &str,
    row_ids: &[String],
) -> Result<()> {
    if row_ids.len() != data.n() {
        return Err(Error::dim(
            "matrix CSV row ids",
            format!("{} ids", data.n()),
            format!("{} ids", row_ids.len()),
        ));
    }
    let mut writer = csv::Writer::from_writer(out);
    let mut header = Vec::with_capacity(data.m() + 1);
    header.push(key_column.to_string());
    header.extend(data.feature_labels().iter().cloned());
    writer.write_record(&header)?;
    for (id, row) in row_ids.iter().zip(data.counts().outer_iter()) {
        let mut record = Vec::with_capacity(data.m() + 1);
        record.push(id.clone());
        record.extend(row.iter().map(|v| v.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a matrix CSV produced by [`write_matrix_csv`] (any key-column name is
/// accepted). Returns the dataset and the row keys in file order.
pub fn read_matrix_csv<R: io::Read>(input: R) -> Result<(CountDataset, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers()?.clone();
    if header.len() < 3 {
        return Err(Error::invalid(format!(
            "matrix CSV needs a key column plus at least 2 feature columns, got {} columns",
            header.len()
        )));
    }
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let m = labels.len();

    let mut row_ids = Vec::new();
    let mut rows: Vec<Vec<u64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line().to_string())
            .unwrap_or_else(|| format!("record {idx}"));
        if record.len() != m + 1 {
            return Err(Error::invalid(format!(
                "line {line}: expected {} fields, got {}",
                m + 1,
                record.len()
            )));
        }
        row_ids.push(record[0].to_string());
        let mut row = Vec::with_capacity(m);
        for field in record.iter().skip(1) {
            let value: u64 = field.trim().parse().map_err(|_| {
                Error::invalid(format!("line {line}: {field:?} is not a nonnegative integer"))
            })?;
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("matrix CSV has no data rows".into()));
    }
    let dataset = CountDataset::from_rows(rows, labels)?;
    Ok((dataset, row_ids))
}
