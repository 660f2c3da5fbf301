//! Single-regime GARCH(1,1) with Gaussian quasi-likelihood.
//!
//! The mean is estimated as the sample mean and held fixed while the variance
//! parameters are fitted (two-step QMLE). The recursion starts from the sample
//! variance and the likelihood conditions on the first observation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{nelder_mead, numerical_std_errors, OptimizerConfig};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Upper bound on `alpha + beta` imposed by the parameter transform.
pub const MAX_PERSISTENCE: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
}

impl GarchParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.omega > 0.0
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha + self.beta < 1.0
            && self.mu.is_finite()
            && self.omega.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("inadmissible GARCH parameters {self:?}")))
        }
    }

    pub fn persistence(&self) -> f64 {
        self.alpha + self.beta
    }

    /// `ω / (1 - α - β)`; fails when the process is not covariance stationary.
    pub fn unconditional_variance(&self) -> Result<f64> {
        let p = self.persistence();
        if p >= 1.0 {
            return Err(Error::NonStationary(p));
        }
        Ok(self.omega / (1.0 - p))
    }

    /// Next-step conditional variance.
    pub fn step(&self, h_prev: f64, eps_prev_sq: f64) -> f64 {
        self.omega + self.alpha * eps_prev_sq + self.beta * h_prev
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GarchStdErrors {
    pub omega: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub mu: Option<f64>,
}

/// Serialized as `{omega, alpha, beta, mu, loglike, std_errors}`; the variance
/// path is kept in memory only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchFit {
    #[serde(flatten)]
    pub params: GarchParams,
    pub loglike: f64,
    #[serde(skip)]
    pub h_path: Vec<f64>,
    pub std_errors: GarchStdErrors,
}

/// How multi-step forecasts beyond the first are anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonAnchor {
    /// `h_{T+s} = h + (α+β)^{s-1} (h_{T+1} - h)`, the iterated one-step recursion.
    #[default]
    NextStep,
    /// `h_{T+s} = h + (α+β)^s (h_T - h)` for `s >= 2`, anchored at the last in-sample variance.
    LastInSample,
}

/// Unbiased sample variance.
pub(crate) fn sample_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
}

pub(crate) fn mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

fn check_series(y: &[f64]) -> Result<()> {
    if y.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            available: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("series contains non-finite values"));
    }
    Ok(())
}

#[inline]
pub(crate) fn gaussian_logpdf(y: f64, mu: f64, h: f64) -> f64 {
    let e = y - mu;
    -0.5 * (LN_2PI + h.ln() + e * e / h)
}

/// Log-likelihood only, starting from `h1`. Used inside the optimizer.
fn loglike_from(y: &[f64], p: &GarchParams, h1: f64) -> f64 {
    let mut h = h1;
    let mut ll = 0.0;
    for t in 1..y.len() {
        let e_prev = y[t - 1] - p.mu;
        h = p.step(h, e_prev * e_prev);
        ll += gaussian_logpdf(y[t], p.mu, h);
    }
    ll
}

/// Conditional variances `h_1..h_R` and the log-likelihood summed from `t = 2`.
///
/// `h_1` is the sample variance of `y`.
pub fn garch_filter(y: &[f64], params: &GarchParams) -> Result<(Vec<f64>, f64)> {
    check_series(y)?;
    params.validate()?;
    let mut h_path = Vec::with_capacity(y.len());
    h_path.push(sample_variance(y));
    let mut ll = 0.0;
    for t in 1..y.len() {
        let e_prev = y[t - 1] - params.mu;
        let h = params.step(h_path[t - 1], e_prev * e_prev);
        ll += gaussian_logpdf(y[t], params.mu, h);
        h_path.push(h);
    }
    Ok((h_path, ll))
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-10, 1.0 - 1e-10);
    (p / (1.0 - p)).ln()
}

/// `(ln ω, logit((α+β)/s_max), logit(α/(α+β)))`.
pub(crate) fn to_unconstrained(omega: f64, alpha: f64, beta: f64) -> [f64; 3] {
    let s = (alpha + beta).max(1e-10);
    [omega.ln(), logit(s / MAX_PERSISTENCE), logit(alpha / s)]
}

pub(crate) fn from_unconstrained(theta: &[f64]) -> (f64, f64, f64) {
    let omega = theta[0].exp();
    let s = MAX_PERSISTENCE * logistic(theta[1]);
    let alpha = s * logistic(theta[2]);
    (omega, alpha, s - alpha)
}

/// Default starting point: `α = 0.05, β = 0.90`, `ω` matching the sample variance.
pub fn standard_start(y: &[f64]) -> GarchParams {
    let var = sample_variance(y);
    GarchParams {
        omega: var * 0.05,
        alpha: 0.05,
        beta: 0.90,
        mu: mean(y),
    }
}

pub fn garch_fit(y: &[f64]) -> Result<GarchFit> {
    garch_fit_with(y, &OptimizerConfig::default())
}

/// Maximize the Gaussian likelihood over `(ω, α, β)` with `μ` fixed at the sample mean.
///
/// Two starting points are tried: the standard `(0.05, 0.90)` start and a
/// less persistent `(0.15, 0.60)` start.
pub fn garch_fit_with(y: &[f64], config: &OptimizerConfig) -> Result<GarchFit> {
    check_series(y)?;
    let var = sample_variance(y);
    if !(var > 0.0) {
        return Err(Error::DegenerateSeries("constant series".into()));
    }
    let mu = mean(y);
    let h1 = var;
    let objective = |theta: &[f64]| {
        let (omega, alpha, beta) = from_unconstrained(theta);
        let p = GarchParams {
            omega,
            alpha,
            beta,
            mu,
        };
        -loglike_from(y, &p, h1)
    };

    let starts = [(0.05, 0.90), (0.15, 0.60)];
    let mut best: Option<crate::estimation::Minimum> = None;
    for (a, b) in starts {
        let start = to_unconstrained(var * (1.0 - a - b), a, b);
        let m = nelder_mead(objective, &start, config)?;
        if best.as_ref().is_none_or(|cur| m.value < cur.value) {
            best = Some(m);
        }
    }
    let best = best.expect("at least one start");
    if !best.converged {
        return Err(Error::FitFailure {
            best_point: best.argmin.clone(),
            best_value: best.value,
            evals: best.evals,
        });
    }

    let (omega, alpha, beta) = from_unconstrained(&best.argmin);
    let params = GarchParams {
        omega,
        alpha,
        beta,
        mu,
    };
    let (h_path, loglike) = garch_filter(y, &params)?;
    let se = numerical_std_errors(
        |th: &[f64]| {
            let p = GarchParams {
                omega: th[0],
                alpha: th[1],
                beta: th[2],
                mu: th[3],
            };
            if p.validate().is_err() {
                return f64::NAN;
            }
            -loglike_from(y, &p, h1)
        },
        &[omega, alpha, beta, mu],
    );
    Ok(GarchFit {
        params,
        loglike,
        h_path,
        std_errors: GarchStdErrors {
            omega: se[0],
            alpha: se[1],
            beta: se[2],
            mu: se[3],
        },
    })
}

/// Variance forecasts `h_{T+1}, ..., h_{T+τ}` from the last in-sample squared
/// innovation and conditional variance.
pub fn garch_forecast(
    params: &GarchParams,
    last_eps_sq: f64,
    last_h: f64,
    tau: usize,
    anchor: HorizonAnchor,
) -> Result<Vec<f64>> {
    if tau == 0 {
        return Err(Error::contract("forecast horizon must be at least 1"));
    }
    let h_bar = params.unconditional_variance()?;
    let persistence = params.persistence();
    let next = params.step(last_h, last_eps_sq);
    let mut out = Vec::with_capacity(tau);
    out.push(next);
    let mut decay = 1.0;
    for _ in 2..=tau {
        decay *= persistence;
        let v = match anchor {
            HorizonAnchor::NextStep => h_bar + decay * (next - h_bar),
            HorizonAnchor::LastInSample => h_bar + decay * persistence * (last_h - h_bar),
        };
        out.push(v);
    }
    Ok(out)
}

impl GarchFit {
    /// Forecast from the end of the series the model was filtered on.
    pub fn forecast(&self, y: &[f64], tau: usize, anchor: HorizonAnchor) -> Result<Vec<f64>> {
        let last = *y.last().ok_or_else(|| Error::contract("empty series"))?;
        let last_h = *self
            .h_path
            .last()
            .ok_or_else(|| Error::contract("fit has no variance path"))?;
        let e = last - self.params.mu;
        garch_forecast(&self.params, e * e, last_h, tau, anchor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(omega: f64, alpha: f64, beta: f64) -> GarchParams {
        GarchParams {
            omega,
            alpha,
            beta,
            mu: 0.0,
        }
    }

    #[test]
    fn single_step_arithmetic() {
        assert_eq!(params(0.1, 0.1, 0.8).step(1.0, 1.0), 1.0);
    }

    #[test]
    fn constant_variance_model() {
        let y = [0.3, -1.2, 0.8, 2.0, -0.5];
        let (h, _) = garch_filter(&y, &params(0.7, 0.0, 0.0)).unwrap();
        assert!(h[1..].iter().all(|v| *v == 0.7));
    }

    #[test]
    fn forecast_fixed_point() {
        let p = params(0.1, 0.1, 0.8);
        let h_bar = 1.0;
        // eps² = h keeps h_{T+1} at h
        let f = garch_forecast(&p, h_bar, h_bar, 10, HorizonAnchor::NextStep).unwrap();
        assert!(f.iter().all(|v| (v - h_bar).abs() < 1e-15));
    }

    #[test]
    fn forecast_second_step() {
        let p = params(0.1, 0.1, 0.8);
        // h_{T+1} = 0.1 + 0.1 * 1.0 + 0.8 * 2.25 = 2
        let f = garch_forecast(&p, 1.0, 2.25, 2, HorizonAnchor::NextStep).unwrap();
        assert!((f[0] - 2.0).abs() < 1e-15);
        assert!((f[1] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn forecast_converges_monotonically() {
        let p = params(0.1, 0.1, 0.8);
        let f = garch_forecast(&p, 9.0, 3.0, 200, HorizonAnchor::NextStep).unwrap();
        assert!(f.windows(2).all(|w| w[1] <= w[0]));
        assert!((f[199] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn literal_anchor_uses_last_variance() {
        let p = params(0.1, 0.1, 0.8);
        let f = garch_forecast(&p, 1.0, 3.0, 3, HorizonAnchor::LastInSample).unwrap();
        assert!((f[0] - p.step(3.0, 1.0)).abs() < 1e-15);
        assert!((f[1] - (1.0 + 0.81 * 2.0)).abs() < 1e-14);
        assert!((f[2] - (1.0 + 0.729 * 2.0)).abs() < 1e-14);
    }

    #[test]
    fn nonstationary_forecast_rejected() {
        let p = params(0.1, 0.3, 0.7);
        assert!(matches!(
            garch_forecast(&p, 1.0, 1.0, 2, HorizonAnchor::NextStep),
            Err(Error::NonStationary(_))
        ));
    }

    #[test]
    fn non_finite_input_rejected() {
        assert!(garch_filter(&[0.1, f64::NAN, 0.2], &params(0.1, 0.1, 0.8)).is_err());
    }

    #[test]
    fn transform_round_trip() {
        let th = to_unconstrained(0.02, 0.07, 0.9);
        let (o, a, b) = from_unconstrained(&th);
        assert!((o - 0.02).abs() < 1e-15);
        assert!((a - 0.07).abs() < 1e-12);
        assert!((b - 0.9).abs() < 1e-12);
    }

    #[test]
    fn json_shape() {
        let fit = GarchFit {
            params: GarchParams {
                omega: 0.0856,
                alpha: 0.0556,
                beta: 0.8942,
                mu: 0.0,
            },
            loglike: -1512.6,
            h_path: vec![1.0],
            std_errors: GarchStdErrors {
                omega: Some(0.01),
                alpha: None,
                beta: Some(0.02),
                mu: Some(0.03),
            },
        };
        let v = serde_json::to_value(&fit).unwrap();
        for key in ["omega", "alpha", "beta", "mu", "loglike", "std_errors"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["std_errors"]["alpha"].is_null());
        assert!(v.get("h_path").is_none());
    }
}
