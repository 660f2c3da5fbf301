//! Two-state Markov regime-switching GARCH(1,1) with Klaassen's lagged-variance aggregation.
//!
//! Regime `S_t ∈ {1, 2}` follows a Markov chain with
//!
//! ```text
//! Π = | 1-p   p  |      p = P(S_t = 2 | S_{t-1} = 1)
//!     |  q   1-q |      q = P(S_t = 1 | S_{t-1} = 2)
//! ```
//!
//! Conditional on `S_t = i` the observation is `N(μ_i, h_t^{(i)})` with
//!
//! ```text
//! h_t^{(i)} = ω_i + α_i ε²_{t-1,i} + β_i E_{t-1}[ V_{t-2}{ε_{t-1}} | S_t = i ]
//! ```
//!
//! where the expectation mixes the previous per-regime variances with the
//! backward probabilities `p̃_{ji} = π_{ji} P_{t-1}(S_{t-1}=j) / P_{t-1}(S_t=i)`,
//! including the dispersion of the regime means. `ε_{t-1,i}` is `y_{t-1}`
//! demeaned by the same mixture, `Σ_j p̃_{ji} μ_j`.
//!
//! Index 0 in every pair is regime 1 (low variance), index 1 is regime 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{nelder_mead, numerical_std_errors, Minimum, OptimizerConfig};
use crate::garch::{self, gaussian_logpdf, sample_variance, GarchFit, MAX_PERSISTENCE};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower clip applied to `ω_i`; `α_i` and `β_i` below it are set to exactly zero.
pub const PARAM_FLOOR: f64 = 1e-12;
const PROB_CLIP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrsGarchParams {
    pub omega: [f64; 2],
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub mu: [f64; 2],
    /// P(S_t = 2 | S_{t-1} = 1), the probability of leaving regime 1.
    pub p: f64,
    /// P(S_t = 1 | S_{t-1} = 2), the probability of leaving regime 2.
    pub q: f64,
}

impl MrsGarchParams {
    /// Both regimes share the given GARCH parameters.
    pub fn degenerate(g: &garch::GarchParams, p: f64, q: f64) -> Self {
        Self {
            omega: [g.omega; 2],
            alpha: [g.alpha; 2],
            beta: [g.beta; 2],
            mu: [g.mu; 2],
            p,
            q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ok = self.p > 0.0 && self.p < 1.0 && self.q > 0.0 && self.q < 1.0;
        for i in 0..2 {
            ok &= self.omega[i] >= 0.0 && self.alpha[i] >= 0.0 && self.beta[i] >= 0.0;
            ok &= self.omega[i].is_finite() && self.alpha[i].is_finite() && self.beta[i].is_finite();
            ok &= self.mu[i].is_finite();
            if self.alpha[i] == 0.0 && self.beta[i] == 0.0 {
                ok &= self.omega[i] > 0.0;
            }
        }
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "inadmissible regime-switching parameters {self:?}"
            )))
        }
    }

    /// Transition probability `π_{ji} = P(S_t = i | S_{t-1} = j)`.
    #[inline]
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        match (from, to) {
            (0, 0) => 1.0 - self.p,
            (0, _) => self.p,
            (_, 0) => self.q,
            _ => 1.0 - self.q,
        }
    }

    /// `ω_i / (1 - α_i - β_i)`, or `None` for a non-stationary regime.
    pub fn regime_unconditional_variance(&self, i: usize) -> Option<f64> {
        let s = self.alpha[i] + self.beta[i];
        (s < 1.0).then(|| self.omega[i] / (1.0 - s))
    }

    /// Relabel regimes, swapping every per-regime parameter together with `p` and `q`.
    pub fn swapped(&self) -> Self {
        Self {
            omega: [self.omega[1], self.omega[0]],
            alpha: [self.alpha[1], self.alpha[0]],
            beta: [self.beta[1], self.beta[0]],
            mu: [self.mu[1], self.mu[0]],
            p: self.q,
            q: self.p,
        }
    }

    /// Representative satisfying the identification constraint (regime 2 has
    /// the larger unconditional variance whenever both are stationary).
    pub fn identified(&self) -> Self {
        match (
            self.regime_unconditional_variance(0),
            self.regime_unconditional_variance(1),
        ) {
            (Some(v1), Some(v2)) if v1 > v2 => self.swapped(),
            _ => *self,
        }
    }
}

/// Stationary distribution `(q/(p+q), p/(p+q))` of the regime chain.
pub fn stationary_distribution(p: f64, q: f64) -> Result<[f64; 2]> {
    let s = p + q;
    if !(s > 0.0) || !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
        return Err(Error::contract(format!(
            "transition probabilities p = {p}, q = {q} have no stationary distribution"
        )));
    }
    Ok([q / s, p / s])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeFilterState {
    /// `P_t(S_t = i)`, updated with observation `t`.
    pub prob_filtered: [f64; 2],
    /// `P_{t-1}(S_t = i)`, before seeing observation `t`.
    pub prob_exante: [f64; 2],
    /// `V_{t-1}{ε_t | S_t = i}`, the per-regime variance used for observation `t`.
    pub h_regime: [f64; 2],
    /// Zero-based index of the last observation absorbed.
    pub t: usize,
}

/// Mixture variance `Σ_j w_j (μ_j² + V_j) - (Σ_j w_j μ_j)²`, computed in the
/// numerically nonnegative form `Σ_j w_j V_j + Σ_j w_j (μ_j - m)²`.
#[inline]
pub fn mixture_variance(weights: [f64; 2], mu: [f64; 2], v: [f64; 2]) -> f64 {
    let m = weights[0] * mu[0] + weights[1] * mu[1];
    weights[0] * (v[0] + (mu[0] - m) * (mu[0] - m)) + weights[1] * (v[1] + (mu[1] - m) * (mu[1] - m))
}

#[inline]
fn exante(filtered: [f64; 2], p: &MrsGarchParams) -> [f64; 2] {
    [
        filtered[0] * p.transition(0, 0) + filtered[1] * p.transition(1, 0),
        filtered[0] * p.transition(0, 1) + filtered[1] * p.transition(1, 1),
    ]
}

/// Backward probabilities `p̃_{ji} = π_{ji} P(S_{t-1}=j) / P(S_t=i)` for target regime `i`.
#[inline]
fn backward_weights(prev: [f64; 2], ahead: [f64; 2], p: &MrsGarchParams, i: usize) -> Option<[f64; 2]> {
    if !(ahead[i] > 0.0) {
        return None;
    }
    Some([
        p.transition(0, i) * prev[0] / ahead[i],
        p.transition(1, i) * prev[1] / ahead[i],
    ])
}

/// `E_{t-1}[V_{t-2}{ε_{t-1}} | S_t = i]` for a state valid at `t - 1`.
pub fn aggregate_lagged_variance(
    state: &RegimeFilterState,
    params: &MrsGarchParams,
    target_regime: usize,
) -> Result<f64> {
    let ahead = exante(state.prob_filtered, params);
    let w = backward_weights(state.prob_filtered, ahead, params, target_regime).ok_or_else(|| {
        Error::FilterDegeneracy {
            step: state.t + 1,
            reason: format!("zero ex-ante probability for regime {}", target_regime + 1),
        }
    })?;
    Ok(mixture_variance(w, params.mu, state.h_regime))
}

/// Per-regime next-step variances and the ex-ante probabilities they go with.
#[inline]
pub(crate) fn next_variances(
    filtered: [f64; 2],
    h_prev: [f64; 2],
    y_prev: f64,
    p: &MrsGarchParams,
) -> Option<([f64; 2], [f64; 2])> {
    let ahead = exante(filtered, p);
    let mut h = [0.0; 2];
    for i in 0..2 {
        let w = backward_weights(filtered, ahead, p, i)?;
        let m = w[0] * p.mu[0] + w[1] * p.mu[1];
        let agg = mixture_variance(w, p.mu, h_prev);
        let e = y_prev - m;
        h[i] = p.omega[i] + p.alpha[i] * e * e + p.beta[i] * agg;
    }
    Some((h, ahead))
}

/// Combine per-regime log densities with prior weights; returns the log
/// mixture density and the posterior regime probabilities.
fn posterior(log_f: [f64; 2], prior: [f64; 2]) -> Option<(f64, [f64; 2])> {
    let a = [log_f[0] + prior[0].ln(), log_f[1] + prior[1].ln()];
    let top = a[0].max(a[1]);
    if !top.is_finite() {
        return None;
    }
    let e = [(a[0] - top).exp(), (a[1] - top).exp()];
    let s = e[0] + e[1];
    Some((top + s.ln(), [e[0] / s, e[1] / s]))
}

/// Log mixture density of `y` and the posterior regime probabilities.
///
/// Works with densities directly and drops to log space only when the
/// mixture density is too small to represent.
#[inline]
pub(crate) fn weigh(y: f64, mu: [f64; 2], h: [f64; 2], prior: [f64; 2]) -> Option<(f64, [f64; 2])> {
    let e = [y - mu[0], y - mu[1]];
    let g = [
        prior[0] * (-0.5 * e[0] * e[0] / h[0]).exp() / h[0].sqrt(),
        prior[1] * (-0.5 * e[1] * e[1] / h[1]).exp() / h[1].sqrt(),
    ];
    let s = g[0] + g[1];
    if s > 1e-250 && s.is_finite() {
        return Some((s.ln() - 0.5 * LN_2PI, [g[0] / s, g[1] / s]));
    }
    posterior(
        [
            gaussian_logpdf(y, mu[0], h[0]),
            gaussian_logpdf(y, mu[1], h[1]),
        ],
        prior,
    )
}

/// Filter state after absorbing the first observation: stationary prior,
/// both regime variances at `h_init`, probabilities updated with `y_first`.
pub fn initial_state(y_first: f64, params: &MrsGarchParams, h_init: f64) -> Result<RegimeFilterState> {
    let prior = stationary_distribution(params.p, params.q)?;
    let (_, post) = weigh(y_first, params.mu, [h_init; 2], prior).ok_or_else(|| Error::FilterDegeneracy {
        step: 0,
        reason: "both regime densities vanish at the first observation".into(),
    })?;
    Ok(RegimeFilterState {
        prob_filtered: post,
        prob_exante: prior,
        h_regime: [h_init; 2],
        t: 0,
    })
}

/// One Hamilton-filter step: absorb `y_t` given the state at `t - 1` and `y_{t-1}`.
///
/// Returns the new state and the log-likelihood increment
/// `log Σ_i f(y_t | S_t = i) P_{t-1}(S_t = i)`.
pub fn filter_step(
    state: &RegimeFilterState,
    y_prev: f64,
    y_t: f64,
    params: &MrsGarchParams,
) -> Result<(RegimeFilterState, f64)> {
    let step = state.t + 1;
    let (h, ahead) = next_variances(state.prob_filtered, state.h_regime, y_prev, params)
        .ok_or_else(|| Error::FilterDegeneracy {
            step,
            reason: "zero ex-ante regime probability".into(),
        })?;
    if !(h[0] > 0.0 && h[1] > 0.0) || !(h[0].is_finite() && h[1].is_finite()) {
        return Err(Error::FilterDegeneracy {
            step,
            reason: format!("non-positive regime variance {h:?}"),
        });
    }
    let (ll, post) = weigh(y_t, params.mu, h, ahead).ok_or_else(|| Error::FilterDegeneracy {
        step,
        reason: "all regime densities underflowed".into(),
    })?;
    Ok((
        RegimeFilterState {
            prob_filtered: post,
            prob_exante: ahead,
            h_regime: h,
            t: step,
        },
        ll,
    ))
}

/// Run the filter over a whole series. The first observation initializes the
/// state (with `h_init` = sample variance of `y`) and is not scored.
pub fn mrs_filter(y: &[f64], params: &MrsGarchParams) -> Result<(Vec<RegimeFilterState>, f64)> {
    if y.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            available: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("series contains non-finite values"));
    }
    params.validate()?;
    let mut path = Vec::with_capacity(y.len());
    path.push(initial_state(y[0], params, sample_variance(y))?);
    let mut ll = 0.0;
    for t in 1..y.len() {
        let (next, inc) = filter_step(&path[t - 1], y[t - 1], y[t], params)?;
        ll += inc;
        path.push(next);
    }
    Ok((path, ll))
}

/// Allocation-free log-likelihood for the optimizer; `None` on degeneracy.
fn loglike_fast(y: &[f64], p: &MrsGarchParams, h_init: f64) -> Option<f64> {
    let s = p.p + p.q;
    let prior = [p.q / s, p.p / s];
    let (_, mut filtered) = weigh(y[0], p.mu, [h_init; 2], prior)?;
    let mut h_prev = [h_init; 2];
    let mut ll = 0.0;
    for t in 1..y.len() {
        let (h, ahead) = next_variances(filtered, h_prev, y[t - 1], p)?;
        if !(h[0] > 0.0 && h[1] > 0.0) {
            return None;
        }
        let (inc, post) = weigh(y[t], p.mu, h, ahead)?;
        ll += inc;
        filtered = post;
        h_prev = h;
    }
    ll.is_finite().then_some(ll)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MrsStdErrors {
    pub omega: [Option<f64>; 2],
    pub alpha: [Option<f64>; 2],
    pub beta: [Option<f64>; 2],
    pub mu: [Option<f64>; 2],
    pub p: Option<f64>,
    pub q: Option<f64>,
}

/// Serialized as `{omega: [..], alpha, beta, mu, p, q, loglike, std_errors}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrsGarchFit {
    #[serde(flatten)]
    pub params: MrsGarchParams,
    pub loglike: f64,
    #[serde(skip)]
    pub filter_path: Vec<RegimeFilterState>,
    pub std_errors: MrsStdErrors,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrsFitOptions {
    /// Fix `μ_1 = μ_2 = 0` and estimate the remaining 8 parameters.
    pub zero_means: bool,
    /// Skip estimation and use the single-regime GARCH fit in both regimes.
    pub lock_degenerate: bool,
    pub std_errors: bool,
    pub optimizer: OptimizerConfig,
}

impl Default for MrsFitOptions {
    fn default() -> Self {
        Self {
            zero_means: false,
            lock_degenerate: false,
            std_errors: true,
            optimizer: OptimizerConfig {
                max_evals: 6000,
                ..OptimizerConfig::default()
            },
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    let y = y.max(PARAM_FLOOR);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    (p / (1.0 - p)).ln()
}

fn floor_zero(v: f64) -> f64 {
    if v < PARAM_FLOOR {
        0.0
    } else {
        v
    }
}

/// Box on the unconstrained coordinates. Logits beyond it are already clipped,
/// so clamping only stops the simplex drifting along flat directions.
const THETA_BOUND: f64 = 40.0;

/// Ceiling on each `ω` as a multiple of the sample variance. A regime that is
/// never visited leaves its `ω` unidentified, and an unbounded value would
/// swamp the mixture forecast even at negligible probability.
pub const OMEGA_CAP: f64 = 1e3;

/// Unconstrained layout: per regime `(softplus⁻¹ ω, logit persistence, logit α-share)`,
/// then `logit p`, `logit q`, then the two means unless they are fixed at zero.
struct Transform {
    zero_means: bool,
    /// Upper clamp on `ω`.
    omega_cap: f64,
}

impl Transform {
    fn dim(&self) -> usize {
        if self.zero_means {
            8
        } else {
            10
        }
    }

    fn decode(&self, th: &[f64]) -> MrsGarchParams {
        let clamped: Vec<f64> = th.iter().map(|v| v.clamp(-THETA_BOUND, THETA_BOUND)).collect();
        let th = &clamped[..];
        let mut out = MrsGarchParams {
            omega: [0.0; 2],
            alpha: [0.0; 2],
            beta: [0.0; 2],
            mu: [0.0; 2],
            p: logistic(th[6]).clamp(PROB_CLIP, 1.0 - PROB_CLIP),
            q: logistic(th[7]).clamp(PROB_CLIP, 1.0 - PROB_CLIP),
        };
        for i in 0..2 {
            let base = 3 * i;
            out.omega[i] = softplus(th[base]).clamp(PARAM_FLOOR, self.omega_cap);
            let s = MAX_PERSISTENCE * logistic(th[base + 1]);
            let a = s * logistic(th[base + 2]);
            out.alpha[i] = floor_zero(a);
            out.beta[i] = floor_zero(s - a);
        }
        if !self.zero_means {
            out.mu = [th[8], th[9]];
        }
        out
    }

    fn encode(&self, p: &MrsGarchParams) -> Vec<f64> {
        let mut th = vec![0.0; self.dim()];
        for i in 0..2 {
            let base = 3 * i;
            let s = (p.alpha[i] + p.beta[i]).max(1e-10);
            th[base] = softplus_inv(p.omega[i]);
            th[base + 1] = logit(s / MAX_PERSISTENCE);
            th[base + 2] = logit(p.alpha[i] / s);
        }
        th[6] = logit(p.p);
        th[7] = logit(p.q);
        if !self.zero_means {
            th[8] = p.mu[0];
            th[9] = p.mu[1];
        }
        th
    }
}

/// Starting points: the regime-degenerate GARCH point plus four perturbations
/// that split `ω` by `{1/4, 4}` across regimes, either keeping the GARCH
/// dynamics or switching to a low-persistence `(α, β) = (0.05, 0.5)`, each
/// with staying probabilities 0.9 and 0.98.
fn starting_points(g: &garch::GarchParams, var: f64, zero_means: bool) -> Vec<MrsGarchParams> {
    let mu = if zero_means { 0.0 } else { g.mu };
    let base = garch::GarchParams { mu, ..*g };
    let mut starts = vec![MrsGarchParams::degenerate(&base, 0.05, 0.05)];
    let low_omega = var * (1.0 - 0.55);
    for stay in [0.9, 0.98] {
        for (omega, alpha, beta) in [(g.omega, g.alpha, g.beta), (low_omega, 0.05, 0.5)] {
            starts.push(MrsGarchParams {
                omega: [omega / 4.0, omega * 4.0],
                alpha: [alpha; 2],
                beta: [beta; 2],
                mu: [mu; 2],
                p: 1.0 - stay,
                q: 1.0 - stay,
            });
        }
    }
    // pure level switching, no conditional heteroskedasticity within a regime
    starts.push(MrsGarchParams {
        omega: [var * 0.4, var * 1.6],
        alpha: [0.0; 2],
        beta: [0.0; 2],
        mu: [mu; 2],
        p: 0.02,
        q: 0.02,
    });
    starts
}

pub fn mrs_fit(y: &[f64]) -> Result<MrsGarchFit> {
    mrs_fit_with(y, &MrsFitOptions::default())
}

/// Maximum-likelihood fit with multistart Nelder-Mead.
///
/// The single-regime GARCH fit seeds the starting points, so the result is
/// never worse than the regime-degenerate reduction of that fit.
pub fn mrs_fit_with(y: &[f64], options: &MrsFitOptions) -> Result<MrsGarchFit> {
    let g = garch::garch_fit_with(y, &OptimizerConfig::default()).or_else(|e| match e {
        // a non-converged GARCH start is still a usable seed
        Error::FitFailure { best_point, .. } => {
            let (omega, alpha, beta) = garch::from_unconstrained(&best_point);
            let params = garch::GarchParams {
                omega,
                alpha,
                beta,
                mu: garch::mean(y),
            };
            let (h_path, loglike) = garch::garch_filter(y, &params)?;
            Ok(GarchFit {
                params,
                loglike,
                h_path,
                std_errors: Default::default(),
            })
        }
        other => Err(other),
    })?;
    mrs_fit_from_garch(y, &g, options)
}

/// As [`mrs_fit_with`], reusing an existing single-regime fit of the same series.
pub fn mrs_fit_from_garch(y: &[f64], g: &GarchFit, options: &MrsFitOptions) -> Result<MrsGarchFit> {
    let var = sample_variance(y);
    if options.lock_degenerate {
        let params = MrsGarchParams::degenerate(&g.params, 0.05, 0.05);
        return finish_fit(y, params, options);
    }
    let tr = Transform {
        zero_means: options.zero_means,
        omega_cap: OMEGA_CAP * var,
    };
    let objective = |th: &[f64]| match loglike_fast(y, &tr.decode(th), var) {
        Some(ll) => -ll,
        None => f64::NAN,
    };

    // screen every start on a quarter of the budget, then polish the best one
    let screen = OptimizerConfig {
        max_evals: (options.optimizer.max_evals / 4).max(100),
        ..options.optimizer
    };
    let mut best: Option<Minimum> = None;
    for start in starting_points(&g.params, var, options.zero_means) {
        let th0 = tr.encode(&start);
        let Ok(m) = nelder_mead(objective, &th0, &screen) else {
            continue;
        };
        log::debug!(
            "regime-switching start {start:?}: -loglike {} after {} evaluations",
            m.value,
            m.evals
        );
        if best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let Some(screened) = best else {
        return Err(Error::FitFailure {
            best_point: Vec::new(),
            best_value: f64::NAN,
            evals: 0,
        });
    };
    let mut chosen = nelder_mead(objective, &screened.argmin, &options.optimizer)?;
    if !chosen.converged {
        // one more polish from wherever the first stalled
        chosen = nelder_mead(objective, &chosen.argmin, &options.optimizer)?;
    }
    if !chosen.converged {
        return Err(Error::FitFailure {
            best_point: chosen.argmin,
            best_value: chosen.value,
            evals: chosen.evals,
        });
    }
    let params = tr.decode(&chosen.argmin).identified();
    finish_fit(y, params, options)
}

fn finish_fit(y: &[f64], params: MrsGarchParams, options: &MrsFitOptions) -> Result<MrsGarchFit> {
    let (filter_path, loglike) = mrs_filter(y, &params)?;
    let std_errors = if options.std_errors && !options.lock_degenerate {
        mrs_std_errors(y, &params, options.zero_means)
    } else {
        MrsStdErrors::default()
    };
    Ok(MrsGarchFit {
        params,
        loglike,
        filter_path,
        std_errors,
    })
}

fn mrs_std_errors(y: &[f64], params: &MrsGarchParams, zero_means: bool) -> MrsStdErrors {
    let var = sample_variance(y);
    let unpack = |th: &[f64]| MrsGarchParams {
        omega: [th[0], th[1]],
        alpha: [th[2], th[3]],
        beta: [th[4], th[5]],
        p: th[6],
        q: th[7],
        mu: if zero_means { [0.0; 2] } else { [th[8], th[9]] },
    };
    let mut theta = vec![
        params.omega[0],
        params.omega[1],
        params.alpha[0],
        params.alpha[1],
        params.beta[0],
        params.beta[1],
        params.p,
        params.q,
    ];
    if !zero_means {
        theta.extend_from_slice(&params.mu);
    }
    let se = numerical_std_errors(
        |th: &[f64]| {
            let p = unpack(th);
            // the boundary ω = 0 is only admissible through the clip
            if p.validate().is_err() || p.omega.iter().any(|o| *o < PARAM_FLOOR) {
                return f64::NAN;
            }
            match loglike_fast(y, &p, var) {
                Some(ll) => -ll,
                None => f64::NAN,
            }
        },
        &theta,
    );
    MrsStdErrors {
        omega: [se[0], se[1]],
        alpha: [se[2], se[3]],
        beta: [se[4], se[5]],
        p: se[6],
        q: se[7],
        mu: if zero_means { [None; 2] } else { [se[8], se[9]] },
    }
}

/// Multi-step variance forecast with its regime decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrsForecast {
    /// Aggregate variance for `T+1, ..., T+τ`.
    pub variances: Vec<f64>,
    /// Predicted regime probabilities `P_T(S_{T+s})`.
    pub regime_probs: Vec<[f64; 2]>,
    /// Per-regime variances `V_T{ε_{T+s} | S_{T+s} = i}`.
    pub regime_variances: Vec<[f64; 2]>,
}

/// Forecast `τ` steps from the filter state at `T` and the last observation `y_T`.
///
/// The first step applies the filter's variance recursion; later steps
/// iterate `V_{s} = ω_i + (α_i + β_i) E[V_{s-1} | S_s = i]` using backward
/// weights built from the predicted regime probabilities. The scalar
/// forecast mixes regimes including the dispersion of the regime means.
pub fn mrs_forecast(
    params: &MrsGarchParams,
    last_state: &RegimeFilterState,
    y_last: f64,
    tau: usize,
) -> Result<MrsForecast> {
    if tau == 0 {
        return Err(Error::contract("forecast horizon must be at least 1"));
    }
    params.validate()?;
    let degenerate = |step: usize| Error::FilterDegeneracy {
        step,
        reason: "zero predicted regime probability".into(),
    };
    let (mut v, mut probs) = next_variances(
        last_state.prob_filtered,
        last_state.h_regime,
        y_last,
        params,
    )
    .ok_or_else(|| degenerate(last_state.t + 1))?;

    let mut out = MrsForecast {
        variances: Vec::with_capacity(tau),
        regime_probs: Vec::with_capacity(tau),
        regime_variances: Vec::with_capacity(tau),
    };
    for s in 1..=tau {
        if s > 1 {
            let ahead = exante(probs, params);
            let mut next = [0.0; 2];
            for i in 0..2 {
                let w = backward_weights(probs, ahead, params, i)
                    .ok_or_else(|| degenerate(last_state.t + s))?;
                let agg = mixture_variance(w, params.mu, v);
                next[i] = params.omega[i] + (params.alpha[i] + params.beta[i]) * agg;
            }
            v = next;
            probs = ahead;
        }
        let total = mixture_variance(probs, params.mu, v);
        if !(total > 0.0) {
            return Err(Error::FilterDegeneracy {
                step: last_state.t + s,
                reason: "non-positive forecast variance".into(),
            });
        }
        out.variances.push(total);
        out.regime_probs.push(probs);
        out.regime_variances.push(v);
    }
    Ok(out)
}

impl MrsGarchFit {
    pub fn last_state(&self) -> Result<&RegimeFilterState> {
        self.filter_path
            .last()
            .ok_or_else(|| Error::contract("fit has no filter path"))
    }

    /// Forecast from the end of the series the model was filtered on.
    pub fn forecast(&self, y: &[f64], tau: usize) -> Result<MrsForecast> {
        let last = *y.last().ok_or_else(|| Error::contract("empty series"))?;
        mrs_forecast(&self.params, self.last_state()?, last, tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym_params() -> MrsGarchParams {
        MrsGarchParams {
            omega: [0.1, 0.1],
            alpha: [0.1, 0.1],
            beta: [0.8, 0.8],
            mu: [0.0, 0.0],
            p: 0.5,
            q: 0.5,
        }
    }

    #[test]
    fn stationary_examples() {
        assert_eq!(stationary_distribution(0.5, 0.5).unwrap(), [0.5, 0.5]);
        let pi = stationary_distribution(0.2, 0.1).unwrap();
        assert!((pi[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((pi[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(stationary_distribution(0.0, 0.0).is_err());
    }

    #[test]
    fn stationary_is_fixed_point() {
        let params = MrsGarchParams {
            p: 0.2,
            q: 0.1,
            ..sym_params()
        };
        let pi = stationary_distribution(params.p, params.q).unwrap();
        let next = exante(pi, &params);
        assert!((next[0] - pi[0]).abs() < 1e-14);
        assert!((next[1] - pi[1]).abs() < 1e-14);
    }

    fn state(filtered: [f64; 2], v: [f64; 2]) -> RegimeFilterState {
        RegimeFilterState {
            prob_filtered: filtered,
            prob_exante: [0.5, 0.5],
            h_regime: v,
            t: 3,
        }
    }

    #[test]
    fn aggregate_zero_means() {
        // p = q = 0.5 and equal filtered probabilities give p̃ = (0.5, 0.5)
        let s = state([0.5, 0.5], [1.0, 3.0]);
        let v = aggregate_lagged_variance(&s, &sym_params(), 0).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn aggregate_point_mass() {
        let params = MrsGarchParams {
            mu: [0.7, -0.4],
            ..sym_params()
        };
        let s = state([1.0, 0.0], [1.3, 5.0]);
        for target in 0..2 {
            let v = aggregate_lagged_variance(&s, &params, target).unwrap();
            assert!((v - 1.3).abs() < 1e-15);
        }
    }

    #[test]
    fn aggregate_with_mean_dispersion() {
        let params = MrsGarchParams {
            mu: [1.0, -1.0],
            ..sym_params()
        };
        let s = state([0.5, 0.5], [1.0, 1.0]);
        let v = aggregate_lagged_variance(&s, &params, 1).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn equal_densities_keep_even_odds() {
        let s = state([0.5, 0.5], [1.0, 1.0]);
        let (next, _) = filter_step(&s, 0.3, -0.2, &sym_params()).unwrap();
        assert!((next.prob_filtered[0] - 0.5).abs() < 1e-15);
        assert!((next.prob_exante[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_step_matches_garch() {
        let g = garch::GarchParams {
            omega: 0.2,
            alpha: 0.15,
            beta: 0.7,
            mu: 0.05,
        };
        let params = MrsGarchParams::degenerate(&g, 0.3, 0.1);
        let s = state([0.8, 0.2], [1.7, 1.7]);
        let (next, inc) = filter_step(&s, 0.9, -0.4, &params).unwrap();
        let h = g.step(1.7, (0.9 - 0.05_f64).powi(2));
        assert!((next.h_regime[0] - h).abs() < 1e-14);
        assert!((next.h_regime[1] - h).abs() < 1e-14);
        assert!((inc - gaussian_logpdf(-0.4, 0.05, h)).abs() < 1e-12);
    }

    #[test]
    fn label_swap_leaves_likelihood() {
        let params = MrsGarchParams {
            omega: [0.05, 0.6],
            alpha: [0.05, 0.2],
            beta: [0.85, 0.5],
            mu: [0.1, -0.2],
            p: 0.03,
            q: 0.08,
        };
        let y: Vec<f64> = (0..300).map(|i| ((i * 7919) % 211) as f64 / 60.0 - 1.7).collect();
        let (_, a) = mrs_filter(&y, &params).unwrap();
        let (_, b) = mrs_filter(&y, &params.swapped()).unwrap();
        assert!((a - b).abs() < 1e-9);
        let id = params.swapped().identified();
        assert_eq!(id, params);
    }

    #[test]
    fn transform_round_trip() {
        let tr = Transform { zero_means: false, omega_cap: f64::INFINITY };
        let p = MrsGarchParams {
            omega: [0.05, 0.6],
            alpha: [0.05, 0.2],
            beta: [0.85, 0.5],
            mu: [0.1, -0.2],
            p: 0.03,
            q: 0.08,
        };
        let back = tr.decode(&tr.encode(&p));
        for i in 0..2 {
            assert!((back.omega[i] - p.omega[i]).abs() < 1e-12);
            assert!((back.alpha[i] - p.alpha[i]).abs() < 1e-10);
            assert!((back.beta[i] - p.beta[i]).abs() < 1e-10);
            assert_eq!(back.mu[i], p.mu[i]);
        }
        assert!((back.p - p.p).abs() < 1e-12);
    }

    #[test]
    fn floors_produce_exact_zeros() {
        let tr = Transform { zero_means: true, omega_cap: f64::INFINITY };
        let mut th = vec![0.0; 8];
        th[0] = -80.0; // ω₁ → floor
        th[2] = -80.0; // α share → 0
        let p = tr.decode(&th);
        assert_eq!(p.omega[0], PARAM_FLOOR);
        assert_eq!(p.alpha[0], 0.0);
        assert!(p.beta[0] > 0.0);
    }

    #[test]
    fn forecast_absorbing_regime() {
        let params = MrsGarchParams {
            omega: [0.1, 1.0],
            alpha: [0.1, 0.2],
            beta: [0.8, 0.3],
            mu: [0.0, 0.0],
            p: 1e-15,
            q: 1e-15,
        };
        let s = state([1.0, 0.0], [1.5, 4.0]);
        let f = mrs_forecast(&params, &s, 0.5, 6).unwrap();
        let g = garch::GarchParams {
            omega: 0.1,
            alpha: 0.1,
            beta: 0.8,
            mu: 0.0,
        };
        let expected =
            garch::garch_forecast(&g, 0.25, 1.5, 6, garch::HorizonAnchor::NextStep).unwrap();
        for (a, b) in f.variances.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn forecast_rejects_zero_horizon() {
        let s = state([0.5, 0.5], [1.0, 1.0]);
        assert!(mrs_forecast(&sym_params(), &s, 0.0, 0).is_err());
    }

    #[test]
    fn json_shape() {
        let fit = MrsGarchFit {
            params: MrsGarchParams {
                omega: [0.0923, 0.0780],
                alpha: [0.0, 0.2058],
                beta: [0.7396, 0.7417],
                mu: [0.0, 0.0],
                p: 0.8134,
                q: 0.5838,
            },
            loglike: -1496.3,
            filter_path: vec![],
            std_errors: MrsStdErrors::default(),
        };
        let v = serde_json::to_value(&fit).unwrap();
        assert_eq!(v["omega"].as_array().unwrap().len(), 2);
        for key in ["alpha", "beta", "mu", "p", "q", "loglike", "std_errors"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: MrsGarchFit = serde_json::from_value(v).unwrap();
        assert_eq!(back.params, fit.params);
    }
}
