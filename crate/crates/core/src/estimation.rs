//! Derivative-free optimization, numerical standard errors and likelihood-ratio tests.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this.
    pub tol_f: f64,
    /// Stop when the simplex diameter (max-norm from the best vertex) falls below this.
    pub tol_x: f64,
    /// Drives the orientation of restart simplices.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_evals: 5000,
            tol_f: 1e-10,
            tol_x: 1e-8,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_evals < 100 {
            return Err(Error::invalid("optimizer max_evals must be at least 100"));
        }
        if !(self.tol_f > 0.0 && self.tol_x > 0.0) {
            return Err(Error::invalid("optimizer tolerances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;
const MAX_RESTARTS: usize = 3;

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

/// Nelder-Mead simplex minimization.
///
/// The initial simplex has edges `0.05 (1 + |start_i|)` along each axis.
/// Non-finite objective values are treated as `+∞`, so an objective may
/// signal infeasibility by returning NaN. After convergence the search is
/// restarted from the best vertex (up to three times) and stops once a
/// restart no longer improves the value by `tol_f`.
pub fn nelder_mead<F>(objective: F, start: &[f64], config: &OptimizerConfig) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = start.len();
    if n == 0 {
        return Err(Error::contract("cannot optimize over zero parameters"));
    }
    let mut f = Counted {
        f: objective,
        evals: 0,
    };
    let f0 = f.eval(start);
    if !f0.is_finite() {
        return Err(Error::contract("objective is not finite at the starting point"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut best = start.to_vec();
    let mut best_value = f0;
    let mut converged = false;
    for restart in 0..=MAX_RESTARTS {
        let signs: Vec<f64> = (0..n)
            .map(|_| {
                if restart == 0 || rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        let (x, v, ok) = simplex_search(&mut f, &best, best_value, &signs, config);
        let improvement = best_value - v;
        if v <= best_value {
            best = x;
            best_value = v;
        }
        converged = ok;
        if !ok || f.evals >= config.max_evals {
            break;
        }
        if restart > 0 && improvement < config.tol_f {
            break;
        }
    }

    Ok(Minimum {
        argmin: best,
        value: best_value,
        evals: f.evals,
        converged,
    })
}

fn simplex_search<F: FnMut(&[f64]) -> f64>(
    f: &mut Counted<F>,
    start: &[f64],
    f_start: f64,
    signs: &[f64],
    config: &OptimizerConfig,
) -> (Vec<f64>, f64, bool) {
    let n = start.len();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut vals: Vec<f64> = Vec::with_capacity(n + 1);
    pts.push(start.to_vec());
    vals.push(f_start);
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += signs[i] * 0.05 * (1.0 + start[i].abs());
        vals.push(f.eval(&p));
        pts.push(p);
    }

    let mut order: Vec<usize> = (0..=n).collect();
    loop {
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap().then(a.cmp(&b)));
        let ib = order[0];
        let iw = order[n];
        let isw = order[n - 1];

        let spread = vals[iw] - vals[ib];
        let diameter = pts
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&pts[ib])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if (spread.is_finite() && spread < config.tol_f) || diameter < config.tol_x {
            return (pts[ib].clone(), vals[ib], true);
        }
        if f.evals >= config.max_evals {
            return (pts[ib].clone(), vals[ib], false);
        }

        let mut centroid = vec![0.0; n];
        for &i in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&pts[i]) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= n as f64);

        let along = |coef: f64, from: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(c, x)| c + coef * (c - x))
                .collect()
        };

        let xr = along(REFLECT, &pts[iw]);
        let fr = f.eval(&xr);
        if fr < vals[ib] {
            let xe = along(EXPAND, &pts[iw]);
            let fe = f.eval(&xe);
            if fe < fr {
                pts[iw] = xe;
                vals[iw] = fe;
            } else {
                pts[iw] = xr;
                vals[iw] = fr;
            }
            continue;
        }
        if fr < vals[isw] {
            pts[iw] = xr;
            vals[iw] = fr;
            continue;
        }
        if fr < vals[iw] {
            // outside contraction, towards the reflected point
            let xc: Vec<f64> = centroid
                .iter()
                .zip(&xr)
                .map(|(c, r)| c + CONTRACT * (r - c))
                .collect();
            let fc = f.eval(&xc);
            if fc <= fr {
                pts[iw] = xc;
                vals[iw] = fc;
                continue;
            }
        } else {
            let xc: Vec<f64> = centroid
                .iter()
                .zip(&pts[iw])
                .map(|(c, w)| c + CONTRACT * (w - c))
                .collect();
            let fc = f.eval(&xc);
            if fc < vals[iw] {
                pts[iw] = xc;
                vals[iw] = fc;
                continue;
            }
        }

        let best = pts[ib].clone();
        for i in 0..=n {
            if i == ib {
                continue;
            }
            for (x, b) in pts[i].iter_mut().zip(&best) {
                *x = b + SHRINK * (*x - b);
            }
            vals[i] = f.eval(&pts[i]);
        }
    }
}

/// Standard errors from the inverse of a central-difference Hessian of a
/// negative log-likelihood.
///
/// The step for parameter `i` is `1e-4 (1 + |θ_i|)`. A parameter whose
/// stencil leaves the feasible region (non-finite objective), or whose
/// inverse-Hessian diagonal is not positive, gets `None`.
pub fn numerical_std_errors<F>(mut negloglike: F, theta_hat: &[f64]) -> Vec<Option<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = theta_hat.len();
    let f0 = negloglike(theta_hat);
    if !f0.is_finite() {
        return vec![None; n];
    }
    let steps: Vec<f64> = theta_hat.iter().map(|t| 1e-4 * (1.0 + t.abs())).collect();
    let mut eval = |shifts: &[(usize, f64)]| {
        let mut x = theta_hat.to_vec();
        for &(i, d) in shifts {
            x[i] += d;
        }
        negloglike(&x)
    };

    let mut usable = vec![true; n];
    let mut hess = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let hi = steps[i];
        let fp = eval(&[(i, hi)]);
        let fm = eval(&[(i, -hi)]);
        if !(fp.is_finite() && fm.is_finite()) {
            usable[i] = false;
            continue;
        }
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if !(usable[i] && usable[j]) {
                continue;
            }
            let (hi, hj) = (steps[i], steps[j]);
            let fpp = eval(&[(i, hi), (j, hj)]);
            let fpm = eval(&[(i, hi), (j, -hj)]);
            let fmp = eval(&[(i, -hi), (j, hj)]);
            let fmm = eval(&[(i, -hi), (j, -hj)]);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            if v.is_finite() {
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            } else {
                usable[i] = false;
                usable[j] = false;
            }
        }
    }

    let idx: Vec<usize> = (0..n).filter(|&i| usable[i]).collect();
    let mut out = vec![None; n];
    if idx.is_empty() {
        return out;
    }
    let reduced = DMatrix::from_fn(idx.len(), idx.len(), |a, b| hess[(idx[a], idx[b])]);
    let inverse = match reduced.clone().cholesky() {
        Some(chol) => Some(chol.inverse()),
        None => reduced.try_inverse(),
    };
    if let Some(inv) = inverse {
        for (a, &i) in idx.iter().enumerate() {
            let v = inv[(a, a)];
            if v > 0.0 && v.is_finite() {
                out[i] = Some(v.sqrt());
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrTestResult {
    /// `2 (LL_full - LL_restricted)`, clipped at zero.
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    /// Set when the restricted log-likelihood beats the full one by more than 1e-6.
    pub nesting_violation: bool,
}

pub fn lr_test(loglike_restricted: f64, loglike_full: f64, df: u32) -> Result<LrTestResult> {
    if df == 0 {
        return Err(Error::contract("likelihood-ratio test needs df >= 1"));
    }
    if !(loglike_restricted.is_finite() && loglike_full.is_finite()) {
        return Err(Error::contract("log-likelihoods must be finite"));
    }
    let diff = loglike_full - loglike_restricted;
    let statistic = (2.0 * diff).max(0.0);
    Ok(LrTestResult {
        statistic,
        df,
        p_value: special::chi2_sf(statistic, df),
        nesting_violation: diff < -1e-6,
    })
}
