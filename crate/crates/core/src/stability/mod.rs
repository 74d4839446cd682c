//! Ensemble deviation metrics.
//!
//! For models `p_1..p_n` with mean `p̄`, the deviation matrix `K` stacks the
//! centered rows `p_i - p̄`. Its Gram matrix `G = K Kᵀ` is only `n x n`, so
//! the spectrum of the ensemble spread is obtained without ever forming an
//! `m x m` covariance. Directions in parameter space are recovered as
//! `u_i = Kᵀ v_i / sqrt(λ_i)`.

mod jacobi;

use serde::{Deserialize, Serialize};

pub use jacobi::{jacobi_eigen, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{l2_norm, ParamVector};

/// Jacobi stopping rule relative to `||G||_F`.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
/// Eigenvalues below this fraction of the largest count as zero.
pub const RANK_CUTOFF: f64 = 1e-12;
/// Negative round-off tolerated before clamping to zero.
pub const NEGATIVE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSpectrum {
    /// Eigenvalues of `K Kᵀ`, descending. Values at or below
    /// `RANK_CUTOFF * λ_max` are reported as exactly 0.
    pub eigenvalues: Vec<f64>,
    /// `Σ sqrt(λ_i)`: the nuclear norm of `K`.
    pub sqrt_sum: f64,
    /// `sqrt(Σ λ_i)`: the Frobenius norm of `K`.
    pub sqrt_of_sum: f64,
    /// Orthonormal parameter-space directions, one per retained eigenvalue
    /// (the leading `directions.len()` entries of `eigenvalues`).
    #[serde(skip)]
    pub directions: Vec<Vec<f64>>,
}

impl EigenSpectrum {
    pub fn retained(&self) -> usize {
        self.directions.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub n_models: usize,
    /// Mean over models of `||p_i - p̄||`.
    pub deviation_l2: f64,
    /// Mean over models of `||p_i||`.
    pub mean_model_l2: f64,
    /// `100 * deviation_l2 / mean_model_l2`; 0 when every model is zero.
    pub percent_deviation: f64,
    pub spectrum: EigenSpectrum,
}

/// Centered rows `p_i - p̄`.
///
/// The mean is taken as `p_1 + mean(p_i - p_1)` so that identical models
/// produce exactly zero rows.
fn centered_rows(models: &[ParamVector]) -> Vec<Vec<f64>> {
    let n = models.len() as f64;
    let anchor = models[0].as_slice();
    let m = anchor.len();
    let mut shift = vec![0.0; m];
    for p in models {
        for ((s, &x), &a) in shift.iter_mut().zip(p.as_slice()).zip(anchor) {
            *s += x - a;
        }
    }
    shift.iter_mut().for_each(|s| *s /= n);
    models
        .iter()
        .map(|p| {
            p.as_slice()
                .iter()
                .zip(anchor)
                .zip(&shift)
                .map(|((&x, &a), &s)| (x - a) - s)
                .collect()
        })
        .collect()
}

pub fn deviation_report(models: &[ParamVector]) -> Result<DeviationReport> {
    if models.len() < 2 {
        return Err(Error::TooFewModels(models.len()));
    }
    let m = models[0].len();
    for p in &models[1..] {
        if p.len() != m || !p.same_shape(&models[0]) {
            return Err(Error::DimensionMismatch {
                location: "ensemble member".into(),
                expected: m,
                found: p.len(),
            });
        }
    }
    let n = models.len();
    let rows = centered_rows(models);
    let deviation_l2 = rows.iter().map(|r| l2_norm(r)).sum::<f64>() / n as f64;
    let mean_model_l2 = models.iter().map(ParamVector::norm).sum::<f64>() / n as f64;
    let percent_deviation = if mean_model_l2 > 0.0 {
        100.0 * deviation_l2 / mean_model_l2
    } else {
        0.0
    };
    let spectrum = gram_spectrum(&rows)?;
    Ok(DeviationReport {
        n_models: n,
        deviation_l2,
        mean_model_l2,
        percent_deviation,
        spectrum,
    })
}

/// Spectrum of `K Kᵀ` for the given rows of `K`.
pub fn gram_spectrum(rows: &[Vec<f64>]) -> Result<EigenSpectrum> {
    let n = rows.len();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            gram[i * n + j] = dot;
            gram[j * n + i] = dot;
        }
    }
    let eig = jacobi_eigen(&gram, n, JACOBI_TOLERANCE)?;
    let lambda_max = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let eigenvalues: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| {
            debug_assert!(l >= -NEGATIVE_FLOOR * lambda_max.max(f64::MIN_POSITIVE));
            // Below the cutoff an eigenvalue is rounding noise of order
            // eps * lambda_max, and its square root would leak into sqrt_sum.
            if l > RANK_CUTOFF * lambda_max {
                l
            } else {
                0.0
            }
        })
        .collect();
    let m = rows.first().map_or(0, Vec::len);
    let mut directions = Vec::new();
    for (&lambda, v) in eigenvalues.iter().zip(&eig.vectors) {
        if lambda <= RANK_CUTOFF * lambda_max {
            break;
        }
        let inv = 1.0 / lambda.sqrt();
        let mut u = vec![0.0; m];
        for (row, &vi) in rows.iter().zip(v) {
            u.iter_mut().zip(row).for_each(|(a, &k)| *a += vi * k);
        }
        u.iter_mut().for_each(|a| *a *= inv);
        directions.push(u);
    }
    Ok(EigenSpectrum {
        sqrt_sum: eigenvalues.iter().map(|l| l.sqrt()).sum(),
        sqrt_of_sum: eigenvalues.iter().sum::<f64>().sqrt(),
        eigenvalues,
        directions,
    })
}

/// One point of a per-epoch deviation series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub epoch: usize,
    pub deviation_l2: f64,
    pub percent_deviation: f64,
    pub sqrt_sum: f64,
}

impl SeriesPoint {
    pub fn from_report(epoch: usize, report: &DeviationReport) -> Self {
        Self {
            epoch,
            deviation_l2: report.deviation_l2,
            percent_deviation: report.percent_deviation,
            sqrt_sum: report.spectrum.sqrt_sum,
        }
    }
}

/// Deviation at every recorded epoch. `snapshots[i][k]` is model `i` at
/// `epochs[k]`.
pub fn percent_series(epochs: &[usize], snapshots: &[Vec<ParamVector>]) -> Result<Vec<SeriesPoint>> {
    if snapshots.len() < 2 {
        return Err(Error::TooFewModels(snapshots.len()));
    }
    for (i, s) in snapshots.iter().enumerate() {
        if s.len() != epochs.len() {
            return Err(Error::DimensionMismatch {
                location: format!("snapshot count of model {i}"),
                expected: epochs.len(),
                found: s.len(),
            });
        }
    }
    epochs
        .iter()
        .enumerate()
        .map(|(k, &epoch)| {
            let at: Vec<ParamVector> = snapshots.iter().map(|s| s[k].clone()).collect();
            deviation_report(&at).map(|r| SeriesPoint::from_report(epoch, &r))
        })
        .collect()
}

pub fn series_csv(series: &[SeriesPoint]) -> String {
    let mut out = String::from("epoch,deviation_l2,percent_deviation,sqrt_sum\n");
    for p in series {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.epoch, p.deviation_l2, p.percent_deviation, p.sqrt_sum
        ));
    }
    out
}
