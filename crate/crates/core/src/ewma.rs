//! Exponentially weighted moving-average covariance baseline.
//!
//! The recursion puts the decay factor on the innovation:
//!
//! ```text
//! Σ_t = (1 - λ) Σ_{t-1} + λ (r - μ)(r - μ)ᵀ
//! ```
//!
//! so `λ = 0.06` here corresponds to the RiskMetrics weight of 0.94 on the lag term.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::pca::CovarianceForecast;

pub const DEFAULT_LAMBDA: f64 = 0.06;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwmaState {
    /// Covariance after incorporating every return seen so far, i.e. the one-step forecast.
    pub sigma: DMatrix<f64>,
    pub lambda: f64,
    pub mu: DVector<f64>,
}

impl EwmaState {
    pub fn new(sigma: DMatrix<f64>, lambda: f64, mu: DVector<f64>) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::invalid(format!("EWMA lambda {lambda} outside (0, 1)")));
        }
        let n = sigma.nrows();
        if sigma.ncols() != n || mu.len() != n {
            return Err(Error::contract("EWMA sigma and mu dimensions disagree"));
        }
        if linalg::asymmetry(&sigma) > 1e-12 {
            return Err(Error::contract("EWMA sigma is not symmetric"));
        }
        Ok(Self { sigma, lambda, mu })
    }

    /// Seed from an in-sample window: `Σ_0` is the sample covariance, `μ` the sample mean.
    pub fn from_window(returns: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        if returns.nrows() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                available: returns.nrows(),
            });
        }
        Self::new(
            linalg::sample_covariance(returns),
            lambda,
            linalg::column_means(returns),
        )
    }

    /// Seed from a window and run the recursion through every row of it.
    pub fn filtered(returns: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        let mut state = Self::from_window(returns, lambda)?;
        for row in returns.row_iter() {
            let r = row.transpose();
            state = ewma_update(&state, &r)?;
        }
        Ok(state)
    }
}

pub fn ewma_update(state: &EwmaState, r: &DVector<f64>) -> Result<EwmaState> {
    let n = state.sigma.nrows();
    if r.len() != n {
        return Err(Error::contract(format!(
            "return vector has {} entries, state has dimension {n}",
            r.len()
        )));
    }
    let e = r - &state.mu;
    let keep = 1.0 - state.lambda;
    let mut sigma = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = keep * state.sigma[(i, j)] + state.lambda * e[i] * e[j];
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    Ok(EwmaState {
        sigma,
        lambda: state.lambda,
        mu: state.mu.clone(),
    })
}

/// Every horizon repeats the one-step forecast.
pub fn ewma_forecast(state: &EwmaState, tau: usize) -> Result<CovarianceForecast> {
    if tau == 0 {
        return Err(Error::contract("forecast horizon must be at least 1"));
    }
    CovarianceForecast::new(vec![state.sigma.clone(); tau])
}
