//! Means, covariance and correlation derived from [`SuffStats`] alone.
//!
//! Covariance is formed the direct way, `(S - n μμᵀ) / (n - ddof)`, which
//! loses precision when `n μ_j²` is close to `S_jj`. The per-column ratio
//! `κ_j = n μ_j² / S_jj` measures how much of the raw second moment the mean
//! term cancels; columns above [`KAPPA_THRESHOLD`] are flagged. Negative
//! variances are reported as computed.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{CancellationError, Error, Result};
use crate::matrix::SquareMatrix;
use crate::suffstats::SuffStats;

pub const KAPPA_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancellationDiagnostics {
    /// `n μ_j² / S_jj` per column; 0 when `S_jj` is 0.
    pub kappa: Vec<f64>,
    pub flagged_columns: Vec<usize>,
    pub negative_variance_columns: Vec<usize>,
}

impl CancellationDiagnostics {
    pub fn is_clean(&self) -> bool {
        self.flagged_columns.is_empty() && self.negative_variance_columns.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub matrix: SquareMatrix,
    pub diagnostics: CancellationDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub ddof: u8,
    /// Extra columns to drop, by index in the sidecar's schema.
    pub exclude: BTreeSet<usize>,
    /// Keep the schema's identifier columns.
    pub include_identifiers: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { ddof: 1, exclude: BTreeSet::new(), include_identifiers: false }
    }
}

impl AnalysisOptions {
    /// Columns dropped from `ss` under these options.
    pub fn dropped(&self, ss: &SuffStats) -> BTreeSet<usize> {
        let mut drop = self.exclude.clone();
        if !self.include_identifiers {
            drop.extend(ss.schema().identifier_columns());
        }
        drop
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisResult {
    /// Indices into the original schema.
    pub included_columns: Vec<usize>,
    pub column_names: Vec<String>,
    pub n: u64,
    pub ddof: u8,
    pub mean: Vec<f64>,
    pub covariance: SquareMatrix,
    /// Absent when some variance is not positive; see `cancellation`.
    pub correlation: Option<SquareMatrix>,
    pub cancellation: Option<CancellationError>,
    pub diagnostics: CancellationDiagnostics,
}

/// Restricts `ss` to the columns not in `drop`.
pub fn exclude_columns(ss: &SuffStats, drop: &BTreeSet<usize>) -> Result<SuffStats> {
    let p = ss.column_count();
    if let Some(&bad) = drop.iter().find(|&&c| c >= p) {
        return Err(Error::InvalidArgument(format!("cannot exclude column {bad}: only {p} columns")));
    }
    let keep = kept_columns(p, drop);
    if keep.is_empty() {
        return Err(Error::InvalidArgument("every column would be excluded".into()));
    }
    Ok(ss.select(&keep))
}

fn kept_columns(p: usize, drop: &BTreeSet<usize>) -> Vec<usize> {
    (0..p).filter(|c| !drop.contains(c)).collect()
}

pub fn means(ss: &SuffStats) -> Result<Vec<f64>> {
    if ss.n() == 0 {
        return Err(Error::Empty("means of zero rows".into()));
    }
    let n = ss.n() as f64;
    Ok(ss.sums().iter().map(|s| s / n).collect())
}

pub fn covariance(ss: &SuffStats, ddof: u8) -> Result<Covariance> {
    if ddof > 1 {
        return Err(Error::InvalidArgument(format!("ddof must be 0 or 1, got {ddof}")));
    }
    if ss.n() <= ddof as u64 {
        return Err(Error::InvalidArgument(format!("covariance with ddof {ddof} needs more than {} rows", ss.n())));
    }
    let mu = means(ss)?;
    let n = ss.n() as f64;
    let denom = (ss.n() - ddof as u64) as f64;
    let p = ss.column_count();
    let matrix = SquareMatrix::from_fn(p, |j, k| {
        let (a, b) = if j <= k { (j, k) } else { (k, j) };
        (ss.cross(a, b) - n * mu[a] * mu[b]) / denom
    });

    let kappa: Vec<f64> = (0..p)
        .map(|j| {
            let sjj = ss.cross(j, j);
            if sjj == 0.0 {
                0.0
            } else {
                n * mu[j] * mu[j] / sjj
            }
        })
        .collect();
    let flagged_columns = (0..p).filter(|&j| kappa[j] > KAPPA_THRESHOLD).collect();
    let negative_variance_columns = (0..p).filter(|&j| matrix[(j, j)] < 0.0).collect();
    Ok(Covariance {
        matrix,
        diagnostics: CancellationDiagnostics { kappa, flagged_columns, negative_variance_columns },
    })
}

/// `R_jk = C_jk / sqrt(C_jj C_kk)` with an exact unit diagonal.
pub fn correlation(cov: &SquareMatrix) -> std::result::Result<SquareMatrix, CancellationError> {
    let var = cov.diagonal();
    let bad: Vec<usize> = (0..var.len()).filter(|&j| var[j] <= 0.0 || var[j].is_nan()).collect();
    if !bad.is_empty() {
        return Err(CancellationError {
            variances: bad.iter().map(|&j| var[j]).collect(),
            labels: bad.iter().map(|j| j.to_string()).collect(),
            columns: bad,
        });
    }
    Ok(SquareMatrix::from_fn(var.len(), |j, k| {
        if j == k {
            1.0
        } else {
            0.5 * (cov[(j, k)] + cov[(k, j)]) / (var[j] * var[k]).sqrt()
        }
    }))
}

pub fn analyze(ss: &SuffStats, options: &AnalysisOptions) -> Result<AnalysisResult> {
    let drop = options.dropped(ss);
    let included_columns = kept_columns(ss.column_count(), &drop);
    let sub = exclude_columns(ss, &drop)?;
    let mean = means(&sub)?;
    let cov = covariance(&sub, options.ddof)?;
    let names = sub.schema().column_names().to_vec();
    let (correlation, cancellation) = match correlation(&cov.matrix) {
        Ok(r) => (Some(r), None),
        Err(e) => {
            let mut e = e.with_names(&names);
            e.columns = e.columns.iter().map(|&c| included_columns[c]).collect();
            (None, Some(e))
        }
    };
    Ok(AnalysisResult {
        included_columns,
        column_names: names,
        n: sub.n(),
        ddof: options.ddof,
        mean,
        covariance: cov.matrix,
        correlation,
        cancellation,
        diagnostics: cov.diagnostics,
    })
}
