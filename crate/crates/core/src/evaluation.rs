//! Volatility loss functions and the Diebold-Mariano test of equal predictive accuracy.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::normal_two_sided_p;

/// Floor applied to `x²` inside the log loss.
pub const R2LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse1,
    Mse2,
    Mad1,
    Mad2,
    R2log,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Mse1,
        LossKind::Mse2,
        LossKind::Mad1,
        LossKind::Mad2,
        LossKind::R2log,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LossKind::Mse1 => "MSE1",
            LossKind::Mse2 => "MSE2",
            LossKind::Mad1 => "MAD1",
            LossKind::Mad2 => "MAD2",
            LossKind::R2log => "R2LOG",
        }
    }

    /// Loss of one forecast `h` against one proxy observation `x`.
    #[inline]
    pub fn eval(self, x: f64, h: f64) -> f64 {
        match self {
            LossKind::Mse1 => (x - h.sqrt()).powi(2),
            LossKind::Mse2 => (x * x - h).powi(2),
            LossKind::Mad1 => (x - h.sqrt()).abs(),
            LossKind::Mad2 => (x * x - h).abs(),
            LossKind::R2log => ((x * x).max(R2LOG_FLOOR) / h).ln().powi(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mse1: f64,
    pub mse2: f64,
    pub mad1: f64,
    pub mad2: f64,
    pub r2log: f64,
}

impl LossReport {
    pub fn get(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::Mse1 => self.mse1,
            LossKind::Mse2 => self.mse2,
            LossKind::Mad1 => self.mad1,
            LossKind::Mad2 => self.mad2,
            LossKind::R2log => self.r2log,
        }
    }
}

fn check_pair(x: &[f64], h: &[f64]) -> Result<()> {
    if x.len() != h.len() {
        return Err(Error::contract(format!(
            "proxy has {} entries, forecasts {}",
            x.len(),
            h.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::contract("empty loss series"));
    }
    if let Some(v) = h.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::contract(format!("variance forecast {v} is not positive")));
    }
    if let Some(v) = x.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::contract(format!("proxy value {v} is negative or non-finite")));
    }
    Ok(())
}

/// Per-observation losses, the input to [`dm_test`].
pub fn loss_series(x: &[f64], h: &[f64], kind: LossKind) -> Result<Vec<f64>> {
    check_pair(x, h)?;
    Ok(x.iter().zip(h).map(|(x, h)| kind.eval(*x, *h)).collect())
}

pub fn loss_functions(x: &[f64], h: &[f64]) -> Result<LossReport> {
    check_pair(x, h)?;
    let n = x.len() as f64;
    let mean = |kind: LossKind| x.iter().zip(h).map(|(x, h)| kind.eval(*x, *h)).sum::<f64>() / n;
    Ok(LossReport {
        mse1: mean(LossKind::Mse1),
        mse2: mean(LossKind::Mse2),
        mad1: mean(LossKind::Mad1),
        mad2: mean(LossKind::Mad2),
        r2log: mean(LossKind::R2log),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmTestResult {
    pub statistic: f64,
    /// Two-sided standard-normal p-value.
    pub p_value: f64,
    pub mean_d: f64,
    pub horizon: usize,
    /// The autocovariance-corrected variance was negative and `γ(0)/n` was used.
    pub variance_fallback: bool,
}

/// Autocovariance of `d` at lag `k` with the `1/n` convention.
pub fn autocovariance(d: &[f64], mean: f64, k: usize) -> f64 {
    let n = d.len();
    (k..n).map(|t| (d[t] - mean) * (d[t - k] - mean)).sum::<f64>() / n as f64
}

/// Diebold-Mariano statistic for `d = loss_a - loss_b` with `τ - 1` autocovariance lags.
/// Positive values mean model `a` has the larger loss.
pub fn dm_test(loss_a: &[f64], loss_b: &[f64], tau: usize) -> Result<DmTestResult> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::contract("loss series differ in length"));
    }
    let n = loss_a.len();
    if n < 10 {
        return Err(Error::InsufficientData {
            needed: 10,
            available: n,
        });
    }
    if tau == 0 {
        return Err(Error::contract("horizon must be at least 1"));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("loss differential is not finite"));
    }
    let mean_d = d.iter().sum::<f64>() / n as f64;
    let gamma0 = autocovariance(&d, mean_d, 0);
    if !(gamma0 > 0.0) {
        return Err(Error::DegenerateSeries(
            "loss differential has zero variance".into(),
        ));
    }
    let mut bracket = gamma0;
    for k in 1..tau.min(n) {
        bracket += 2.0 * autocovariance(&d, mean_d, k);
    }
    let variance_fallback = !(bracket > 0.0);
    if variance_fallback {
        bracket = gamma0;
    }
    let statistic = mean_d / (bracket / n as f64).sqrt();
    Ok(DmTestResult {
        statistic,
        p_value: normal_two_sided_p(statistic),
        mean_d,
        horizon: tau,
        variance_fallback,
    })
}

/// `|wᵀ r|` summed over consecutive non-overlapping blocks of `period` rows.
/// A trailing partial block is dropped.
pub fn realized_proxy(returns: &DMatrix<f64>, weights: &[f64], period: usize) -> Result<Vec<f64>> {
    if weights.len() != returns.ncols() {
        return Err(Error::contract(format!(
            "{} weights for {} assets",
            weights.len(),
            returns.ncols()
        )));
    }
    if period == 0 {
        return Err(Error::contract("holding period must be at least 1"));
    }
    if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
        return Err(Error::contract("weights must sum to one"));
    }
    let daily: Vec<f64> = returns
        .row_iter()
        .map(|r| r.iter().zip(weights).map(|(a, w)| a * w).sum())
        .collect();
    Ok(daily
        .chunks_exact(period)
        .map(|c| c.iter().sum::<f64>().abs())
        .collect())
}

/// Loss table with one row per loss (MSE1, MSE2, MAD1, MAD2, R2LOG) and one column per model.
pub fn loss_table(models: &[(&str, LossReport)]) -> String {
    let mut out = format!("{:<6}", "");
    for (name, _) in models {
        let _ = write!(out, " {name:>14}");
    }
    out.push('\n');
    for kind in LossKind::ALL {
        let _ = write!(out, "{:<6}", kind.label());
        for (_, r) in models {
            let _ = write!(out, " {:>14.6e}", r.get(kind));
        }
        out.push('\n');
    }
    out
}

pub fn dm_table(rows: &[(LossKind, DmTestResult)]) -> String {
    let mut out = format!("{:<6} {:>12} {:>12}\n", "", "DM", "p-value");
    for (kind, r) in rows {
        let flag = if r.variance_fallback { " *" } else { "" };
        let _ = writeln!(
            out,
            "{:<6} {:>12.4} {:>12.4}{flag}",
            kind.label(),
            r.statistic,
            r.p_value
        );
    }
    out
}
