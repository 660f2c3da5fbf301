//! Rolling-window backtest: normalize, decompose, fit, forecast, reconstruct, allocate.
//!
//! Origins are grouped into refit blocks of `refit_every` consecutive
//! origins. Parameters are estimated at the first origin of a block and the
//! filters are re-run with those parameters at the remaining origins. Blocks
//! share no state, so they run in parallel and every forecast depends only
//! on rows before its origin.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{windows_for, NormalizationStats, ReturnPanel, Window, WindowSpec};
use crate::error::{Error, Result};
use crate::estimation::{lr_test, LrTestResult, OptimizerConfig};
use crate::evaluation::{dm_test, loss_functions, loss_series, DmTestResult, LossKind, LossReport};
use crate::ewma::{ewma_forecast, EwmaState, DEFAULT_LAMBDA};
use crate::garch::{self, garch_filter, garch_forecast, GarchParams, HorizonAnchor};
use crate::linalg;
use crate::mrs_garch::{self, mrs_filter, mrs_forecast, MrsFitOptions, MrsGarchParams};
use crate::pca::{self, CovarianceForecast, ExcludedComponents, PcaBasis};
use crate::portfolio::{self, gmvp, horizon_covariance, PerformanceReport, PortfolioWeights};
use crate::simulation::{covariance_distance, BlockKind, BlockTruth};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "REGIME_OGARCH_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ewma,
    Ogarch,
    Mrsogarch,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ewma" => Ok(ModelKind::Ewma),
            "ogarch" => Ok(ModelKind::Ogarch),
            "mrsogarch" => Ok(ModelKind::Mrsogarch),
            other => Err(Error::invalid(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Statistics from the in-sample window only.
    #[default]
    InWindow,
    /// Statistics from the whole panel. Looks ahead; for comparison only.
    FullSample,
}

/// Inclusive range of date labels, compared as strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: String,
    pub end: String,
}

impl DateRange {
    pub fn contains(&self, date: &str) -> bool {
        self.start.as_str() <= date && date <= self.end.as_str()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    pub model: ModelKind,
    pub n_components: usize,
    pub window: WindowSpec,
    pub expanding: bool,
    pub normalization: NormalizationMode,
    pub excluded: ExcludedComponents,
    pub anchor: HorizonAnchor,
    pub ewma_lambda: f64,
    pub optimizer: OptimizerConfig,
    pub refit_every: usize,
    pub zero_means: bool,
    /// Use the single-regime fit in both regimes instead of estimating the switching model.
    pub lock_degenerate: bool,
    pub crisis: Vec<DateRange>,
    pub output_dir: Option<PathBuf>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Ogarch,
            n_components: 1,
            window: WindowSpec {
                in_sample_len: 900,
                horizon: 1,
                step: 1,
            },
            expanding: false,
            normalization: NormalizationMode::InWindow,
            excluded: ExcludedComponents::Unconditional,
            anchor: HorizonAnchor::NextStep,
            ewma_lambda: DEFAULT_LAMBDA,
            optimizer: MrsFitOptions::default().optimizer,
            refit_every: 10,
            zero_means: false,
            lock_degenerate: false,
            crisis: Vec::new(),
            output_dir: None,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self, n_assets: usize) -> Result<()> {
        self.window.validate()?;
        self.optimizer.validate()?;
        if self.model != ModelKind::Ewma && (self.n_components == 0 || self.n_components > n_assets) {
            return Err(Error::invalid(format!(
                "number of components must lie in 1..={n_assets}, got {}",
                self.n_components
            )));
        }
        if !(self.ewma_lambda > 0.0 && self.ewma_lambda < 1.0) {
            return Err(Error::invalid("EWMA lambda must lie in (0, 1)"));
        }
        if self.refit_every == 0 {
            return Err(Error::invalid("refit_every must be at least 1"));
        }
        Ok(())
    }

    /// 252 for daily holding periods, 52 for weekly, `252 / τ` otherwise.
    pub fn periods_per_year(&self) -> f64 {
        match self.window.horizon {
            1 => portfolio::DAILY_PERIODS,
            5 => portfolio::WEEKLY_PERIODS,
            h => portfolio::DAILY_PERIODS / h as f64,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Fitted univariate model of one principal component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ComponentModel {
    Garch { params: GarchParams, loglike: f64 },
    Mrs { params: MrsGarchParams, loglike: f64 },
}

impl ComponentModel {
    pub fn loglike(&self) -> f64 {
        match self {
            ComponentModel::Garch { loglike, .. } | ComponentModel::Mrs { loglike, .. } => *loglike,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub origin: usize,
    pub component: usize,
    #[serde(flatten)]
    pub model: ComponentModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum OriginStatus {
    Ok,
    /// The fit failed; weights and forecasts were carried forward from the previous origin.
    CarriedForward(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginRecord {
    /// First forecast row; the in-sample window ends just before it.
    pub origin: usize,
    pub date: String,
    pub weights: PortfolioWeights,
    pub forecast: CovarianceForecast,
    pub horizon_cov: DMatrix<f64>,
    /// GMVP log return over rows `origin .. origin + τ`.
    pub realized_return: f64,
    /// `|w_eqᵀ r|` over the same rows.
    pub proxy: f64,
    /// `w_eqᵀ Σ_{t+1:t+τ} w_eq`.
    pub proxy_forecast: f64,
    /// Next-day probability of the high-variance regime for each modelled component.
    pub regime_probs: Vec<f64>,
    pub refit: bool,
    pub status: OriginStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub performance: PerformanceReport,
    pub performance_crisis: Option<PerformanceReport>,
    pub losses: LossReport,
    pub failures: usize,
    pub param_trail: Vec<ParamRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub config: BacktestConfig,
    pub asset_names: Vec<String>,
    pub origins: Vec<OriginRecord>,
    pub report: BacktestReport,
}

/// What one origin produces before weights are chosen.
struct OriginForecast {
    forecast: CovarianceForecast,
    regime_probs: Vec<f64>,
}

/// Component-space forecast: the basis and the `τ x k` variance forecasts.
pub struct ComponentForecast {
    pub basis: PcaBasis,
    pub variances: DMatrix<f64>,
    pub regime_probs: Vec<f64>,
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

fn normalization_stats(panel: &ReturnPanel, window: Range<usize>, mode: NormalizationMode) -> Result<NormalizationStats> {
    match mode {
        NormalizationMode::InWindow => NormalizationStats::from_window(panel, window),
        NormalizationMode::FullSample => NormalizationStats::from_window(panel, 0..panel.n_obs()),
    }
}

/// Basis and component series for one in-sample window.
pub fn window_components(
    panel: &ReturnPanel,
    window: Range<usize>,
    mode: NormalizationMode,
    k: usize,
) -> Result<(PcaBasis, DMatrix<f64>)> {
    let stats = normalization_stats(panel, window.clone(), mode)?;
    let x = stats.apply(&panel.rows(window))?;
    let basis = PcaBasis::fit(&x, stats, k)?;
    let y = pca::to_components(&x, &basis)?;
    Ok((basis, y))
}

fn fit_component(y: &[f64], config: &BacktestConfig) -> Result<ComponentModel> {
    match config.model {
        ModelKind::Ogarch => {
            let fit = garch::garch_fit_with(y, &config.optimizer)?;
            Ok(ComponentModel::Garch {
                params: fit.params,
                loglike: fit.loglike,
            })
        }
        ModelKind::Mrsogarch => {
            let options = MrsFitOptions {
                zero_means: config.zero_means,
                lock_degenerate: config.lock_degenerate,
                std_errors: false,
                optimizer: config.optimizer,
            };
            let fit = mrs_garch::mrs_fit_with(y, &options)?;
            Ok(ComponentModel::Mrs {
                params: fit.params,
                loglike: fit.loglike,
            })
        }
        ModelKind::Ewma => Err(Error::contract("EWMA has no component model")),
    }
}

/// Variance forecasts for one component with fixed parameters; also returns
/// the next-day probability of regime 2 (zero for single-regime models).
fn forecast_component(y: &[f64], model: &ComponentModel, tau: usize, anchor: HorizonAnchor) -> Result<(Vec<f64>, f64)> {
    match model {
        ComponentModel::Garch { params, .. } => {
            let (h_path, _) = garch_filter(y, params)?;
            let e = y[y.len() - 1] - params.mu;
            let v = garch_forecast(params, e * e, h_path[h_path.len() - 1], tau, anchor)?;
            Ok((v, 0.0))
        }
        ComponentModel::Mrs { params, .. } => {
            let (path, _) = mrs_filter(y, params)?;
            let f = mrs_forecast(params, &path[path.len() - 1], y[y.len() - 1], tau)?;
            let p2 = f.regime_probs[0][1];
            Ok((f.variances, p2))
        }
    }
}

/// Component forecasts at one origin. `models` holds fitted parameters from the
/// block's refit origin; missing entries are fitted here and stored.
fn component_forecast(
    panel: &ReturnPanel,
    window: &Window,
    config: &BacktestConfig,
    k: usize,
    models: &mut Option<Vec<ComponentModel>>,
    trail: &mut Vec<ParamRecord>,
) -> Result<ComponentForecast> {
    let (basis, y) = window_components(panel, window.in_sample.clone(), config.normalization, k)?;
    if models.is_none() {
        let fitted = (0..k)
            .map(|j| fit_component(y.column(j).as_slice(), config))
            .collect::<Result<Vec<_>>>()?;
        trail.extend(fitted.iter().enumerate().map(|(j, m)| ParamRecord {
            origin: window.origin,
            component: j,
            model: m.clone(),
        }));
        *models = Some(fitted);
    }
    let fitted = models.as_ref().expect("fitted above");
    let tau = config.window.horizon;
    let mut variances = DMatrix::zeros(tau, k);
    let mut regime_probs = Vec::new();
    for (j, model) in fitted.iter().enumerate() {
        let (v, p2) = forecast_component(y.column(j).as_slice(), model, tau, config.anchor)?;
        for (s, value) in v.into_iter().enumerate() {
            variances[(s, j)] = value;
        }
        if matches!(model, ComponentModel::Mrs { .. }) {
            regime_probs.push(p2);
        }
    }
    Ok(ComponentForecast {
        basis,
        variances,
        regime_probs,
    })
}

fn ewma_origin(panel: &ReturnPanel, window: &Window, config: &BacktestConfig) -> Result<OriginForecast> {
    let state = EwmaState::filtered(&panel.rows(window.in_sample.clone()), config.ewma_lambda)?;
    Ok(OriginForecast {
        forecast: ewma_forecast(&state, config.window.horizon)?,
        regime_probs: Vec::new(),
    })
}

struct BlockOutput {
    forecasts: Vec<(usize, bool, Result<OriginForecast, String>)>,
    trail: Vec<ParamRecord>,
}

fn run_block(panel: &ReturnPanel, windows: &[Window], config: &BacktestConfig) -> BlockOutput {
    let mut models = None;
    let mut trail = Vec::new();
    let mut forecasts = Vec::with_capacity(windows.len());
    for w in windows {
        let refit = models.is_none();
        let out = match config.model {
            ModelKind::Ewma => ewma_origin(panel, w, config),
            _ => component_forecast(panel, w, config, config.n_components, &mut models, &mut trail)
                .and_then(|cf| {
                    Ok(OriginForecast {
                        forecast: pca::reconstruct(&cf.basis, &cf.variances, config.excluded)?,
                        regime_probs: cf.regime_probs,
                    })
                }),
        };
        if let Err(e) = &out {
            log::warn!("origin {}: {e}; carrying forward the previous weights", w.origin);
        }
        forecasts.push((w.origin, refit && config.model != ModelKind::Ewma, out.map_err(|e| e.to_string())));
    }
    BlockOutput { forecasts, trail }
}

fn period_return(panel: &ReturnPanel, rows: Range<usize>, weights: &[f64]) -> f64 {
    let r = panel.returns();
    rows.map(|t| (0..weights.len()).map(|j| weights[j] * r[(t, j)]).sum::<f64>())
        .sum()
}

/// Windows for a configuration, honouring the expanding flag.
pub fn backtest_windows(panel: &ReturnPanel, config: &BacktestConfig) -> Result<Vec<Window>> {
    config.window.validate()?;
    windows_for(panel.n_obs(), &config.window, config.expanding)
}

pub fn run_backtest(panel: &ReturnPanel, config: &BacktestConfig) -> Result<BacktestResult> {
    let n = panel.n_assets();
    config.validate(n)?;
    let windows = backtest_windows(panel, config)?;
    let tau = config.window.horizon;

    let pool = worker_pool()?;
    let blocks: Vec<BlockOutput> = pool.install(|| {
        windows
            .par_chunks(config.refit_every)
            .map(|chunk| run_block(panel, chunk, config))
            .collect()
    });

    let equal = PortfolioWeights::equal(n);
    let mut origins: Vec<OriginRecord> = Vec::with_capacity(windows.len());
    let mut trail = Vec::new();
    let mut failures = 0;
    for block in blocks {
        trail.extend(block.trail);
        for (origin, refit, out) in block.forecasts {
            let rows = origin..origin + tau;
            let computed = out.and_then(|f| {
                let horizon_cov = horizon_covariance(&f.forecast);
                let weights = gmvp(&horizon_cov).map_err(|e| e.to_string())?;
                Ok((f, horizon_cov, weights))
            });
            let (forecast, horizon_cov, weights, regime_probs, status) = match computed {
                Ok((f, cov, w)) => (f.forecast, cov, w.at(origin, tau), f.regime_probs, OriginStatus::Ok),
                Err(reason) => {
                    failures += 1;
                    match origins.last() {
                        Some(prev) => (
                            prev.forecast.clone(),
                            prev.horizon_cov.clone(),
                            prev.weights.clone().at(origin, tau),
                            prev.regime_probs.clone(),
                            OriginStatus::CarriedForward(reason),
                        ),
                        None => {
                            // nothing to carry: fall back to the in-sample covariance
                            let window = windows[0].in_sample.clone();
                            let cov = linalg::sample_covariance(&panel.rows(window));
                            let f = CovarianceForecast::new(vec![cov; tau])?;
                            let h = horizon_covariance(&f);
                            (f, h, equal.clone().at(origin, tau), Vec::new(), OriginStatus::CarriedForward(reason))
                        }
                    }
                }
            };
            origins.push(OriginRecord {
                origin,
                date: panel.dates()[origin].clone(),
                realized_return: period_return(panel, rows.clone(), &weights.weights),
                proxy: period_return(panel, rows, &equal.weights).abs(),
                proxy_forecast: equal.variance(&horizon_cov),
                weights,
                forecast,
                horizon_cov,
                regime_probs,
                refit,
                status,
            });
        }
    }

    let report = summarize(&origins, config, failures, trail)?;
    Ok(BacktestResult {
        config: config.clone(),
        asset_names: panel.asset_names().to_vec(),
        origins,
        report,
    })
}

/// Fit and forecast from the end of the panel, as a live run would.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatestForecast {
    /// Date label of the last in-sample row.
    pub as_of: String,
    pub in_sample_len: usize,
    pub basis: Option<PcaBasis>,
    pub models: Vec<ParamRecord>,
    pub forecast: CovarianceForecast,
    pub weights: PortfolioWeights,
    pub regime_probs: Vec<f64>,
}

/// Forecast `τ` steps past the last row of `panel` from the last `R` rows
/// (all rows when the configuration is expanding).
pub fn forecast_latest(panel: &ReturnPanel, config: &BacktestConfig) -> Result<LatestForecast> {
    let n = panel.n_assets();
    config.validate(n)?;
    let t = panel.n_obs();
    let r = config.window.in_sample_len;
    if t < r {
        return Err(Error::InsufficientData {
            needed: r,
            available: t,
        });
    }
    let window = Window {
        in_sample: if config.expanding { 0..t } else { t - r..t },
        origin: t,
    };
    let (forecast, basis, regime_probs, models) = match config.model {
        ModelKind::Ewma => {
            let f = ewma_origin(panel, &window, config)?;
            (f.forecast, None, f.regime_probs, Vec::new())
        }
        _ => {
            let mut models = None;
            let mut trail = Vec::new();
            let cf = component_forecast(panel, &window, config, config.n_components, &mut models, &mut trail)?;
            let f = pca::reconstruct(&cf.basis, &cf.variances, config.excluded)?;
            (f, Some(cf.basis), cf.regime_probs, trail)
        }
    };
    let weights = gmvp(&horizon_covariance(&forecast))?.at(t, config.window.horizon);
    Ok(LatestForecast {
        as_of: panel.dates()[t - 1].clone(),
        in_sample_len: window.in_sample.len(),
        basis,
        models,
        forecast,
        weights,
        regime_probs,
    })
}

/// Origins whose holding periods do not overlap, taken greedily from the start.
fn non_overlapping(origins: &[OriginRecord], tau: usize) -> Vec<&OriginRecord> {
    let mut out = Vec::new();
    let mut next_free = 0;
    for r in origins {
        if r.origin >= next_free {
            out.push(r);
            next_free = r.origin + tau;
        }
    }
    out
}

fn summarize(origins: &[OriginRecord], config: &BacktestConfig, failures: usize, param_trail: Vec<ParamRecord>) -> Result<BacktestReport> {
    let tau = config.window.horizon;
    let held = non_overlapping(origins, tau);
    let returns: Vec<f64> = held.iter().map(|r| r.realized_return).collect();
    let ppy = config.periods_per_year();
    let performance = portfolio::performance_stats(&returns, ppy)?;
    let crisis: Vec<f64> = held
        .iter()
        .filter(|r| config.crisis.iter().any(|c| c.contains(&r.date)))
        .map(|r| r.realized_return)
        .collect();
    let performance_crisis = if crisis.len() >= 2 {
        Some(portfolio::performance_stats(&crisis, ppy)?)
    } else {
        None
    };
    let x: Vec<f64> = origins.iter().map(|r| r.proxy).collect();
    let h: Vec<f64> = origins.iter().map(|r| r.proxy_forecast).collect();
    Ok(BacktestReport {
        performance,
        performance_crisis,
        losses: loss_functions(&x, &h)?,
        failures,
        param_trail,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub d_total: f64,
    pub d_normal: Option<f64>,
    pub d_crisis: Option<f64>,
}

/// Mean one-day covariance distance to the true block covariance for each
/// number of retained components.
///
/// All components are modelled once per origin; each `k` then keeps the
/// first `k` variance forecasts and treats the rest per `config.excluded`.
pub fn component_sweep(
    panel: &ReturnPanel,
    truth: &BlockTruth,
    config: &BacktestConfig,
    k_values: &[usize],
) -> Result<Vec<SweepRow>> {
    let n = panel.n_assets();
    if truth.length != panel.n_obs() || truth.covariances.iter().any(|c| c.nrows() != n) {
        return Err(Error::contract("block truth does not match the panel"));
    }
    if config.model == ModelKind::Ewma {
        return Err(Error::contract("the component sweep needs a component model"));
    }
    if k_values.is_empty() || k_values.iter().any(|&k| k == 0 || k > n) {
        return Err(Error::invalid(format!("k values must lie in 1..={n}")));
    }
    let full = BacktestConfig {
        n_components: n,
        ..config.clone()
    };
    full.validate(n)?;
    let windows = backtest_windows(panel, &full)?;

    let block = |chunk: &[Window]| -> Vec<Result<Vec<f64>>> {
        let mut models = None;
        let mut trail = Vec::new();
        chunk
            .iter()
            .map(|w| {
                let cf = component_forecast(panel, w, &full, n, &mut models, &mut trail)?;
                let target = truth.covariance_at(w.origin);
                k_values
                    .iter()
                    .map(|&k| {
                        let basis = cf.basis.clone().with_components(k)?;
                        let first_day = cf.variances.rows(0, 1).into_owned();
                        let f = pca::reconstruct(&basis, &first_day, full.excluded)?;
                        covariance_distance(&f.matrices[0], target)
                    })
                    .collect()
            })
            .collect()
    };
    let pool = worker_pool()?;
    let per_origin: Vec<Result<Vec<f64>>> = pool.install(|| {
        windows
            .par_chunks(full.refit_every)
            .flat_map_iter(block)
            .collect()
    });

    let mut sums = vec![[0.0; 3]; k_values.len()];
    let mut counts = [0usize; 3];
    for (w, d) in windows.iter().zip(per_origin) {
        let d = match d {
            Ok(d) => d,
            Err(e) => {
                log::warn!("origin {} skipped in sweep: {e}", w.origin);
                continue;
            }
        };
        let kind = 1 + usize::from(truth.kind_at(w.origin) == BlockKind::Crisis);
        counts[0] += 1;
        counts[kind] += 1;
        for (s, v) in sums.iter_mut().zip(&d) {
            s[0] += v;
            s[kind] += v;
        }
    }
    if counts[0] == 0 {
        return Err(Error::invalid("no origin produced a forecast"));
    }
    let mean = |s: f64, c: usize| (c > 0).then(|| s / c as f64);
    Ok(k_values
        .iter()
        .zip(&sums)
        .map(|(&k, s)| SweepRow {
            k,
            d_total: s[0] / counts[0] as f64,
            d_normal: mean(s[1], counts[1]),
            d_crisis: mean(s[2], counts[2]),
        })
        .collect())
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"));
    let mut out = format!("{:>3} {:>12} {:>12} {:>12}\n", "k", "D_total", "D_normal", "D_crisis");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>3} {:>12.4} {:>12} {:>12}",
            r.k,
            r.d_total,
            fmt(r.d_normal),
            fmt(r.d_crisis)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ForecastFile {
    origin: usize,
    date: String,
    horizon: usize,
    daily: Vec<DMatrix<f64>>,
    horizon_cov: DMatrix<f64>,
    regime_probs: Vec<f64>,
}

/// Write `config.json`, `weights.csv`, `forecasts/<origin>.json` and `report.json`.
pub fn write_bundle(result: &BacktestResult, dir: &Path) -> Result<()> {
    let forecasts = dir.join("forecasts");
    std::fs::create_dir_all(&forecasts)?;
    serde_json::to_writer_pretty(std::fs::File::create(dir.join("config.json"))?, &result.config)?;
    serde_json::to_writer_pretty(std::fs::File::create(dir.join("report.json"))?, &result.report)?;

    let mut wtr = csv::Writer::from_path(dir.join("weights.csv"))?;
    let mut header: Vec<String> = vec!["origin".into(), "date".into()];
    header.extend(result.asset_names.iter().map(|a| format!("w_{a}")));
    header.extend(
        ["realized_return", "proxy", "proxy_forecast", "refit", "status"]
            .iter()
            .map(|s| s.to_string()),
    );
    wtr.write_record(&header)?;
    for r in &result.origins {
        let mut rec = vec![r.origin.to_string(), r.date.clone()];
        rec.extend(r.weights.weights.iter().map(|w| format!("{w:e}")));
        rec.push(format!("{:e}", r.realized_return));
        rec.push(format!("{:e}", r.proxy));
        rec.push(format!("{:e}", r.proxy_forecast));
        rec.push(r.refit.to_string());
        rec.push(match &r.status {
            OriginStatus::Ok => "ok".into(),
            OriginStatus::CarriedForward(_) => "carried_forward".into(),
        });
        wtr.write_record(&rec)?;

        let file = ForecastFile {
            origin: r.origin,
            date: r.date.clone(),
            horizon: r.forecast.horizon,
            daily: r.forecast.matrices.clone(),
            horizon_cov: r.horizon_cov.clone(),
            regime_probs: r.regime_probs.clone(),
        };
        let path = forecasts.join(format!("{:06}.json", r.origin));
        serde_json::to_writer(std::fs::File::create(path)?, &file)?;
    }
    wtr.flush()?;
    Ok(())
}

/// The parts of a result bundle needed for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub config: BacktestConfig,
    pub report: BacktestReport,
    pub origins: Vec<usize>,
    pub proxy: Vec<f64>,
    pub proxy_forecast: Vec<f64>,
    pub realized_return: Vec<f64>,
}

pub fn read_bundle(dir: &Path) -> Result<Bundle> {
    let config = BacktestConfig::read(&dir.join("config.json"))?;
    let report: BacktestReport =
        serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(dir.join("report.json"))?))?;
    let mut rdr = csv::Reader::from_path(dir.join("weights.csv"))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("weights.csv has no `{name}` column")))
    };
    let (c_origin, c_ret, c_x, c_h) = (
        col("origin")?,
        col("realized_return")?,
        col("proxy")?,
        col("proxy_forecast")?,
    );
    let mut b = Bundle {
        config,
        report,
        origins: Vec::new(),
        proxy: Vec::new(),
        proxy_forecast: Vec::new(),
        realized_return: Vec::new(),
    };
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::invalid(format!("cannot parse `{s}` in weights.csv")))
    };
    for rec in rdr.records() {
        let rec = rec?;
        b.origins.push(
            rec[c_origin]
                .parse()
                .map_err(|_| Error::invalid(format!("bad origin `{}`", &rec[c_origin])))?,
        );
        b.realized_return.push(num(&rec[c_ret])?);
        b.proxy.push(num(&rec[c_x])?);
        b.proxy_forecast.push(num(&rec[c_h])?);
    }
    Ok(b)
}

/// DM test of two bundles on every loss, over the origins both share.
pub fn compare_bundles(a: &Bundle, b: &Bundle, tau: usize) -> Result<Vec<(LossKind, DmTestResult)>> {
    let mut xa = Vec::new();
    let mut ha = Vec::new();
    let mut hb = Vec::new();
    let mut j = 0;
    for (i, o) in a.origins.iter().enumerate() {
        while j < b.origins.len() && b.origins[j] < *o {
            j += 1;
        }
        if j < b.origins.len() && b.origins[j] == *o {
            xa.push(a.proxy[i]);
            ha.push(a.proxy_forecast[i]);
            hb.push(b.proxy_forecast[j]);
        }
    }
    LossKind::ALL
        .iter()
        .map(|&kind| {
            let la = loss_series(&xa, &ha, kind)?;
            let lb = loss_series(&xa, &hb, kind)?;
            Ok((kind, dm_test(&la, &lb, tau)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentLr {
    pub component: usize,
    pub origin: usize,
    pub test: LrTestResult,
    /// The same statistic against χ² with 5, 6 and 7 degrees of freedom.
    pub p_by_df: Vec<(u32, f64)>,
}

/// Degrees of freedom reported alongside the primary LR test; the parameter
/// count difference depends on whether regime means are estimated.
pub const LR_DF_ALTERNATIVES: [u32; 3] = [5, 6, 7];

/// Likelihood-ratio tests of switching against single-regime fits, per
/// component at the first estimation origin both bundles share.
pub fn lr_tests(switching: &Bundle, single: &Bundle) -> Result<Vec<ComponentLr>> {
    let mut out = Vec::new();
    for rec in &switching.report.param_trail {
        let ComponentModel::Mrs { .. } = rec.model else {
            continue;
        };
        if out.iter().any(|c: &ComponentLr| c.component == rec.component) {
            continue;
        }
        let restricted = single.report.param_trail.iter().find(|r| {
            r.origin == rec.origin
                && r.component == rec.component
                && matches!(r.model, ComponentModel::Garch { .. })
        });
        if let Some(r) = restricted {
            let df = if switching.config.zero_means { 5 } else { 6 };
            let test = lr_test(r.model.loglike(), rec.model.loglike(), df)?;
            out.push(ComponentLr {
                component: rec.component,
                origin: rec.origin,
                p_by_df: LR_DF_ALTERNATIVES
                    .iter()
                    .map(|&d| (d, crate::special::chi2_sf(test.statistic, d)))
                    .collect(),
                test,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{gen_square_wave, SquareWaveSpec};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid_panel(t: usize, n: usize, seed: u64) -> ReturnPanel {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let scales = [1.0, 1.5, 0.7, 2.0];
        let m = DMatrix::from_fn(t, n, |_, j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.01 * scales[j % 4] * z
        });
        ReturnPanel::with_index_labels(m, (0..n).map(|j| format!("a{j}")).collect()).unwrap()
    }

    fn config(model: ModelKind, r: usize) -> BacktestConfig {
        BacktestConfig {
            model,
            n_components: 2,
            window: WindowSpec {
                in_sample_len: r,
                horizon: 1,
                step: 1,
            },
            ..BacktestConfig::default()
        }
    }

    #[test]
    fn ewma_weights_are_stable_on_iid_data() {
        // a long memory is needed: with λ = 0.06 the weights wander by ±0.3
        let panel = iid_panel(1500, 3, 1);
        let mut cfg = config(ModelKind::Ewma, 500);
        cfg.ewma_lambda = 0.002;
        let res = run_backtest(&panel, &cfg).unwrap();
        assert_eq!(res.origins.len(), 1000);
        let burn = &res.origins[100..];
        for j in 0..3 {
            let w: Vec<f64> = burn.iter().map(|r| r.weights.weights[j]).collect();
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            let drift = w.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
            assert!(drift < 0.05, "asset {j}: {drift}");
        }
    }

    #[test]
    fn every_origin_once() {
        let panel = iid_panel(200, 3, 2);
        let mut cfg = config(ModelKind::Ogarch, 150);
        cfg.window.horizon = 5;
        cfg.window.step = 3;
        let res = run_backtest(&panel, &cfg).unwrap();
        let expected: Vec<usize> = (150..=195).step_by(3).collect();
        let got: Vec<usize> = res.origins.iter().map(|r| r.origin).collect();
        assert_eq!(got, expected);
        assert!(res.origins.iter().all(|r| r.forecast.horizon == 5));
    }

    #[test]
    fn full_rank_round_trip_at_origin() {
        let panel = iid_panel(300, 4, 3);
        let (basis, _) = window_components(&panel, 0..300, NormalizationMode::InWindow, 4).unwrap();
        let d = DMatrix::from_row_slice(1, 4, basis.eigenvalues.as_slice());
        let f = pca::reconstruct(&basis, &d, ExcludedComponents::TruncateToZero).unwrap();
        let s = linalg::sample_covariance(&panel.rows(0..300));
        assert!(covariance_distance(&f.matrices[0], &s).unwrap() < 1e-8);
    }

    #[test]
    fn locked_switching_matches_ogarch() {
        let (panel, _) = gen_square_wave(&SquareWaveSpec {
            length: 260,
            ..SquareWaveSpec::preset(4)
        })
        .unwrap();
        let mut a = config(ModelKind::Ogarch, 200);
        a.window.horizon = 3;
        let mut b = a.clone();
        b.model = ModelKind::Mrsogarch;
        b.lock_degenerate = true;
        let ra = run_backtest(&panel, &a).unwrap();
        let rb = run_backtest(&panel, &b).unwrap();
        for (x, y) in ra.origins.iter().zip(&rb.origins) {
            for (m, n) in x.forecast.matrices.iter().zip(&y.forecast.matrices) {
                assert!((m - n).abs().max() < 1e-8);
            }
        }
    }

    #[test]
    fn bundle_round_trip() {
        let panel = iid_panel(260, 3, 5);
        let res = run_backtest(&panel, &config(ModelKind::Ewma, 200)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&res, dir.path()).unwrap();
        let b = read_bundle(dir.path()).unwrap();
        assert_eq!(b.config, res.config);
        assert_eq!(b.origins.len(), res.origins.len());
        let x: Vec<f64> = res.origins.iter().map(|r| r.proxy).collect();
        assert_eq!(b.proxy, x);
        assert_eq!(std::fs::read_dir(dir.path().join("forecasts")).unwrap().count(), 60);
        let dm = compare_bundles(&b, &b, 1);
        assert!(dm.is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: BacktestConfig = serde_json::from_str(r#"{"model": "mrsogarch", "n_components": 3}"#).unwrap();
        assert_eq!(cfg.model, ModelKind::Mrsogarch);
        assert_eq!(cfg.refit_every, 10);
        assert!(cfg.validate(2).is_err());
        assert!(cfg.validate(3).is_ok());
    }

    #[test]
    fn crisis_range_selects_dates() {
        let r = DateRange {
            start: "2008-08-15".into(),
            end: "2008-12-15".into(),
        };
        assert!(r.contains("2008-08-15") && r.contains("2008-10-01") && r.contains("2008-12-15"));
        assert!(!r.contains("2008-12-16"));
    }
}
