//! Long-only global minimum-variance portfolios and performance statistics.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::pca::CovarianceForecast;

/// Largest universe the exhaustive solver accepts (`2^I` support sets).
pub const MAX_ASSETS: usize = 15;
const RIDGE: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;
const WEIGHT_TOL: f64 = 1e-12;

pub const DAILY_PERIODS: f64 = 252.0;
pub const WEEKLY_PERIODS: f64 = 52.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioWeights {
    pub weights: Vec<f64>,
    /// Index of the forecast origin the weights were formed at.
    pub as_of: usize,
    pub horizon: usize,
    /// The optimal support needed the `1e-10` ridge to be inverted.
    pub ridge_used: bool,
}

impl PortfolioWeights {
    pub fn equal(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
            as_of: 0,
            horizon: 1,
            ridge_used: false,
        }
    }

    pub fn at(mut self, as_of: usize, horizon: usize) -> Self {
        self.as_of = as_of;
        self.horizon = horizon;
        self
    }

    pub fn variance(&self, sigma: &DMatrix<f64>) -> f64 {
        quad_form(sigma, &self.weights)
    }
}

fn quad_form(sigma: &DMatrix<f64>, w: &[f64]) -> f64 {
    let n = w.len();
    let mut v = 0.0;
    for i in 0..n {
        for j in 0..n {
            v += w[i] * sigma[(i, j)] * w[j];
        }
    }
    v
}

fn check_psd(sigma: &DMatrix<f64>) -> Result<()> {
    let n = sigma.nrows();
    if n == 0 || sigma.ncols() != n {
        return Err(Error::contract("covariance must be a non-empty square matrix"));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("covariance has non-finite entries"));
    }
    let scale = sigma.diagonal().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    if linalg::asymmetry(sigma) > 1e-10 * scale {
        return Err(Error::contract("covariance is not symmetric"));
    }
    let min = linalg::min_eigenvalue(sigma)?;
    if min < -PSD_TOL * scale {
        return Err(Error::contract(format!(
            "covariance is not PSD (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// Solve `Σ_S x = 1`, falling back to a ridge when `Σ_S` is singular.
fn solve_support(sub: DMatrix<f64>) -> Option<(DVector<f64>, bool)> {
    let ones = DVector::from_element(sub.nrows(), 1.0);
    if let Some(ch) = sub.clone().cholesky() {
        let x = ch.solve(&ones);
        if x.iter().all(|v| v.is_finite()) {
            return Some((x, false));
        }
    }
    let ridged = sub + DMatrix::identity(ones.len(), ones.len()) * RIDGE;
    let x = match ridged.clone().cholesky() {
        Some(ch) => ch.solve(&ones),
        None => ridged.lu().solve(&ones)?,
    };
    x.iter().all(|v| v.is_finite()).then_some((x, true))
}

/// Long-only minimum-variance weights by exhaustive active-set enumeration.
///
/// Each non-empty support `S` gives the candidate `w_S ∝ Σ_S⁻¹ 1`; the
/// feasible candidate with the smallest variance wins, ties going to the
/// support enumerated first.
pub fn gmvp(sigma: &DMatrix<f64>) -> Result<PortfolioWeights> {
    check_psd(sigma)?;
    let n = sigma.nrows();
    if n > MAX_ASSETS {
        return Err(Error::invalid(format!(
            "exhaustive GMVP supports at most {MAX_ASSETS} assets, got {n}"
        )));
    }
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    let mut idx = Vec::with_capacity(n);
    for mask in 1u32..(1u32 << n) {
        idx.clear();
        idx.extend((0..n).filter(|i| mask & (1 << i) != 0));
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| sigma[(idx[a], idx[b])]);
        let Some((x, ridge)) = solve_support(sub) else {
            continue;
        };
        let total: f64 = x.iter().sum();
        if !(total > 0.0) {
            continue;
        }
        if x.iter().any(|v| v / total < -WEIGHT_TOL) {
            continue;
        }
        let mut w = vec![0.0; n];
        for (a, &i) in idx.iter().enumerate() {
            w[i] = (x[a] / total).max(0.0);
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let var = quad_form(sigma, &w);
        if best.as_ref().is_none_or(|(b, _, _)| var < *b) {
            best = Some((var, w, ridge));
        }
    }
    let (_, weights, ridge_used) =
        best.ok_or_else(|| Error::contract("no feasible support found for GMVP"))?;
    Ok(PortfolioWeights {
        weights,
        as_of: 0,
        horizon: 1,
        ridge_used,
    })
}

/// Largest violation of the KKT conditions for `min wᵀΣw, w >= 0, Σw_i = 1`:
/// `(Σw)_i = λ` on the support and `(Σw)_i >= λ` off it, with `λ = wᵀΣw`.
pub fn kkt_violation(sigma: &DMatrix<f64>, w: &[f64]) -> f64 {
    let g = sigma * DVector::from_column_slice(w);
    let lambda = quad_form(sigma, w);
    let mut worst = (w.iter().sum::<f64>() - 1.0).abs();
    for (i, &wi) in w.iter().enumerate() {
        worst = worst.max((-wi).max(0.0));
        let gap = g[i] - lambda;
        worst = worst.max(if wi > 1e-9 { gap.abs() } else { (-gap).max(0.0) });
    }
    worst
}

/// Covariance of the τ-day holding period: the sum of the daily forecasts.
pub fn horizon_covariance(forecast: &CovarianceForecast) -> DMatrix<f64> {
    let n = forecast.dim();
    forecast
        .matrices
        .iter()
        .fold(DMatrix::zeros(n, n), |acc, m| acc + m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub mean_pa: f64,
    pub std_pa: f64,
    pub q05: f64,
    pub worst: f64,
    /// Deepest peak-to-trough fall of the cumulative log return, `<= 0`.
    pub max_drawdown: f64,
    /// `mean_pa / std_pa` with zero risk-free rate; absent when `std_pa = 0`.
    pub sharpe: Option<f64>,
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `(n - 1) p` in the sorted sample).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = (s.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// Additive drawdown on the running sum of log returns, starting from zero wealth.
pub fn max_drawdown(period_returns: &[f64]) -> f64 {
    let mut cum = 0.0;
    let mut peak = 0.0_f64;
    let mut dd = 0.0_f64;
    for r in period_returns {
        cum += r;
        peak = peak.max(cum);
        dd = dd.min(cum - peak);
    }
    dd
}

pub fn performance_stats(period_returns: &[f64], periods_per_year: f64) -> Result<PerformanceReport> {
    let n = period_returns.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            available: n,
        });
    }
    if period_returns.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("period returns contain non-finite values"));
    }
    if !(periods_per_year > 0.0) {
        return Err(Error::invalid("periods per year must be positive"));
    }
    let mean = period_returns.iter().sum::<f64>() / n as f64;
    let var = period_returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let mean_pa = mean * periods_per_year;
    let std_pa = var.sqrt() * periods_per_year.sqrt();
    Ok(PerformanceReport {
        mean_pa,
        std_pa,
        q05: quantile(period_returns, 0.05),
        worst: period_returns.iter().copied().fold(f64::INFINITY, f64::min),
        max_drawdown: max_drawdown(period_returns),
        sharpe: (std_pa > 0.0).then(|| mean_pa / std_pa),
    })
}

/// Aligned text table, one row per labelled report.
pub fn performance_table(rows: &[(&str, PerformanceReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = format!(
        "{:<width$} {:>14} {:>14} {:>12} {:>12} {:>14} {:>12}\n",
        "", "Mean Ret. P.a.", "Std. Dev. P.a.", "5% Quantile", "Worst case", "Max Draw Down", "Sharpe Ratio"
    );
    for (label, r) in rows {
        let sharpe = r.sharpe.map_or_else(|| "n/a".to_string(), |s| format!("{s:.4}"));
        let _ = writeln!(
            out,
            "{label:<width$} {:>14.4} {:>14.4} {:>12.4} {:>12.4} {:>14.4} {:>12}",
            r.mean_pa, r.std_pa, r.q05, r.worst, r.max_drawdown, sharpe
        );
    }
    out
}
