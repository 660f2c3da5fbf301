//! Principal components of normalized returns and covariance reconstruction.
//!
//! The orthogonal transform is fixed by the eigenvectors of the in-sample
//! correlation matrix. Component variance forecasts are rotated back with
//! `H = U D Uᵀ` and rescaled to asset units with `Σ = W H W`, `W = diag(v)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_io::NormalizationStats;
use crate::error::{Error, Result};
use crate::linalg::{self, jacobi_eigen};

const SYMMETRY_TOL: f64 = 1e-10;
const UNIT_DIAGONAL_TOL: f64 = 1e-8;
const PSD_TOL: f64 = 1e-8;

/// How components beyond the first `k` enter the diagonal variance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcludedComponents {
    /// Use the in-sample eigenvalue (the component's unconditional variance).
    #[default]
    Unconditional,
    /// Drop them entirely; the reconstructed matrix has rank `k`.
    TruncateToZero,
}

/// Orthonormal basis of the in-sample correlation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    /// Columns are eigenvectors, ordered by descending eigenvalue.
    pub eigenvectors: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub stats: NormalizationStats,
    /// Number of retained (modelled) components.
    pub k: usize,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn with_stats(mut self, stats: NormalizationStats) -> Result<Self> {
        if stats.vols.len() != self.dim() || stats.means.len() != self.dim() {
            return Err(Error::contract(format!(
                "normalization stats for {} assets, basis has dimension {}",
                stats.vols.len(),
                self.dim()
            )));
        }
        self.stats = stats;
        Ok(self)
    }

    pub fn with_components(mut self, k: usize) -> Result<Self> {
        if k == 0 || k > self.dim() {
            return Err(Error::contract(format!(
                "retained components must lie in 1..={}, got {k}",
                self.dim()
            )));
        }
        self.k = k;
        Ok(self)
    }

    /// Normalize, decompose and retain `k` components in one go.
    pub fn fit(x: &DMatrix<f64>, stats: NormalizationStats, k: usize) -> Result<Self> {
        let corr = linalg::sample_correlation(x)?;
        spectral_decompose(&corr)?
            .with_stats(stats)?
            .with_components(k)
    }
}

/// Spectral decomposition of a correlation matrix via cyclic Jacobi rotations.
///
/// The returned basis keeps all components (`k = I`) and carries identity
/// normalization stats until [`PcaBasis::with_stats`] is applied.
pub fn spectral_decompose(corr: &DMatrix<f64>) -> Result<PcaBasis> {
    let n = corr.nrows();
    if n == 0 || corr.ncols() != n {
        return Err(Error::contract("correlation matrix must be square and nonempty"));
    }
    let asym = linalg::asymmetry(corr);
    if asym > SYMMETRY_TOL {
        return Err(Error::contract(format!(
            "correlation matrix is asymmetric (max |a_ij - a_ji| = {asym:e})"
        )));
    }
    if let Some(i) = (0..n).find(|&i| (corr[(i, i)] - 1.0).abs() > UNIT_DIAGONAL_TOL) {
        return Err(Error::contract(format!(
            "correlation diagonal entry {i} is {} (expected 1)",
            corr[(i, i)]
        )));
    }
    let eig = jacobi_eigen(corr)?;
    Ok(PcaBasis {
        eigenvectors: eig.vectors,
        eigenvalues: eig.values,
        stats: NormalizationStats {
            means: vec![0.0; n],
            vols: vec![1.0; n],
        },
        k: n,
    })
}

/// Principal components `Y = X U`.
pub fn to_components(x: &DMatrix<f64>, basis: &PcaBasis) -> Result<DMatrix<f64>> {
    if x.ncols() != basis.dim() {
        return Err(Error::contract(format!(
            "matrix has {} columns, basis dimension is {}",
            x.ncols(),
            basis.dim()
        )));
    }
    Ok(x * &basis.eigenvectors)
}

/// Sequence of daily covariance forecasts `Σ_{T+1}, ..., Σ_{T+τ}` in asset units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceForecast {
    pub horizon: usize,
    pub matrices: Vec<DMatrix<f64>>,
}

impl CovarianceForecast {
    /// Validates symmetry (1e-10) and positive semi-definiteness (min eigenvalue >= -1e-8).
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::contract("covariance forecast needs at least one matrix"));
        }
        let n = matrices[0].nrows();
        for (s, m) in matrices.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::contract(format!("forecast matrix {s} has wrong shape")));
            }
            if linalg::asymmetry(m) > SYMMETRY_TOL {
                return Err(Error::contract(format!("forecast matrix {s} is not symmetric")));
            }
            let min = linalg::min_eigenvalue(m)?;
            if min < -PSD_TOL {
                return Err(Error::contract(format!(
                    "forecast matrix {s} is not PSD (min eigenvalue {min:e})"
                )));
            }
        }
        Ok(Self {
            horizon: matrices.len(),
            matrices,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }
}

/// Rebuild asset covariances from per-component variance forecasts.
///
/// `component_variances` is `τ x m` with `m >= k`; row `s` holds the forecast
/// for day `T + s + 1`. Only the first `k` columns are used; the remaining
/// components are filled according to `excluded`.
pub fn reconstruct(
    basis: &PcaBasis,
    component_variances: &DMatrix<f64>,
    excluded: ExcludedComponents,
) -> Result<CovarianceForecast> {
    let n = basis.dim();
    let k = basis.k;
    if component_variances.nrows() == 0 {
        return Err(Error::contract("no forecast rows"));
    }
    if component_variances.ncols() < k {
        return Err(Error::contract(format!(
            "{} component columns supplied, {} retained",
            component_variances.ncols(),
            k
        )));
    }
    let retained = component_variances.columns(0, k);
    if let Some(v) = retained.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::contract(format!(
            "component variance {v} is negative or non-finite"
        )));
    }

    let u = &basis.eigenvectors;
    let w = DVector::from_column_slice(&basis.stats.vols);
    let mut matrices = Vec::with_capacity(component_variances.nrows());
    for row in component_variances.row_iter() {
        let d = DVector::from_fn(n, |j, _| {
            if j < k {
                row[j]
            } else {
                match excluded {
                    ExcludedComponents::Unconditional => basis.eigenvalues[j].max(0.0),
                    ExcludedComponents::TruncateToZero => 0.0,
                }
            }
        });
        // Σ = W U D Uᵀ W computed as B Bᵀ with B = W U sqrt(D), exactly symmetric and PSD.
        let mut b = u.clone();
        for j in 0..n {
            b.column_mut(j).scale_mut(d[j].sqrt());
        }
        for i in 0..n {
            b.row_mut(i).scale_mut(w[i]);
        }
        let mut sigma = &b * b.transpose();
        linalg::symmetrize(&mut sigma);
        matrices.push(sigma);
    }
    CovarianceForecast::new(matrices)
}
