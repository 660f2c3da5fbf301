//! Synthetic return generators and the covariance distance metric.
//!
//! Every generator draws from a `ChaCha20Rng` seeded with `seed_from_u64` and
//! samples normals with `rand_distr::StandardNormal`, so panels are bitwise
//! reproducible for a given seed and crate version. [`SimulationSidecar`]
//! records that choice next to each generated CSV.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_io::{write_csv, ReturnPanel};
use crate::error::{Error, Result};
use crate::garch::GarchParams;
use crate::linalg;
use crate::mrs_garch::{self, MrsGarchParams};

pub const PRNG_NAME: &str = "ChaCha20Rng (rand_chacha 0.9, seed_from_u64)";
pub const NORMAL_SAMPLER: &str = "StandardNormal ziggurat (rand_distr 0.5)";

const BURN_IN: usize = 500;

fn rng_for(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn normal_vector(rng: &mut ChaCha20Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn asset_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("asset{i}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareWaveSpec {
    /// Samples per full low/high cycle; the first half of each cycle is tranquil.
    pub period: usize,
    pub vol_low: Vec<f64>,
    pub vol_high: Vec<f64>,
    pub correlation: f64,
    pub length: usize,
    pub seed: u64,
}

impl SquareWaveSpec {
    /// Two assets, period 100, vols (0.5, 1.0) and (1.0, 2.0), correlation 0.1, 1000 samples.
    pub fn preset(seed: u64) -> Self {
        Self {
            period: 100,
            vol_low: vec![0.5, 1.0],
            vol_high: vec![1.0, 2.0],
            correlation: 0.1,
            length: 1000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.period < 2 {
            return Err(Error::invalid("square-wave period must be at least 2"));
        }
        if self.vol_low.is_empty() || self.vol_low.len() != self.vol_high.len() {
            return Err(Error::invalid("vol_low and vol_high need one entry per asset"));
        }
        if self
            .vol_low
            .iter()
            .zip(&self.vol_high)
            .any(|(l, h)| !(*l > 0.0 && l <= h && h.is_finite()))
        {
            return Err(Error::invalid("need 0 < vol_low <= vol_high for every asset"));
        }
        if !(self.correlation > -1.0 && self.correlation < 1.0) {
            return Err(Error::invalid("correlation must lie in (-1, 1)"));
        }
        if self.length < 2 {
            return Err(Error::invalid("length must be at least 2"));
        }
        Ok(())
    }

    pub fn is_high(&self, t: usize) -> bool {
        t % self.period >= self.period / 2
    }

    /// Indices `t` where the volatility jumps from low to high.
    pub fn upward_switches(&self) -> Vec<usize> {
        (1..self.length)
            .filter(|&t| self.is_high(t) && !self.is_high(t - 1))
            .collect()
    }
}

/// Zero-mean Gaussian returns whose volatilities follow a square wave.
/// Returns the panel and the `T x I` matrix of true volatilities.
pub fn gen_square_wave(spec: &SquareWaveSpec) -> Result<(ReturnPanel, DMatrix<f64>)> {
    spec.validate()?;
    let n = spec.vol_low.len();
    let mut corr = DMatrix::from_element(n, n, spec.correlation);
    corr.fill_diagonal(1.0);
    let factor = linalg::covariance_factor(&corr)?;

    let mut rng = rng_for(spec.seed);
    let mut returns = DMatrix::zeros(spec.length, n);
    let mut vols = DMatrix::zeros(spec.length, n);
    for t in 0..spec.length {
        let v = if spec.is_high(t) { &spec.vol_high } else { &spec.vol_low };
        let z = &factor * normal_vector(&mut rng, n);
        for j in 0..n {
            vols[(t, j)] = v[j];
            returns[(t, j)] = v[j] * z[j];
        }
    }
    Ok((ReturnPanel::with_index_labels(returns, asset_names(n))?, vols))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Normal,
    Crisis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeBlockSpec {
    pub dims: usize,
    pub length: usize,
    /// Interior block boundaries; block `b` covers `[bounds[b-1], bounds[b])`.
    pub bounds: Vec<usize>,
    pub covariances: Vec<DMatrix<f64>>,
    pub kinds: Vec<BlockKind>,
    pub seed: u64,
}

/// Ground truth for a block panel, written to the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTruth {
    pub length: usize,
    pub bounds: Vec<usize>,
    pub covariances: Vec<DMatrix<f64>>,
    pub kinds: Vec<BlockKind>,
}

impl BlockTruth {
    pub fn block_of(&self, t: usize) -> usize {
        self.bounds.iter().take_while(|b| **b <= t).count()
    }

    pub fn covariance_at(&self, t: usize) -> &DMatrix<f64> {
        &self.covariances[self.block_of(t)]
    }

    pub fn kind_at(&self, t: usize) -> BlockKind {
        self.kinds[self.block_of(t)]
    }
}

impl RegimeBlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(Error::invalid("block panel needs at least one dimension"));
        }
        let mut prev = 0;
        for &b in &self.bounds {
            if b <= prev || b >= self.length {
                return Err(Error::invalid(format!(
                    "block bounds {:?} must increase strictly inside (0, {})",
                    self.bounds, self.length
                )));
            }
            prev = b;
        }
        let blocks = self.bounds.len() + 1;
        if self.covariances.len() != blocks || self.kinds.len() != blocks {
            return Err(Error::invalid(format!(
                "{blocks} blocks need {blocks} covariances and kinds"
            )));
        }
        for (b, c) in self.covariances.iter().enumerate() {
            if c.nrows() != self.dims || c.ncols() != self.dims {
                return Err(Error::invalid(format!("block {b} covariance has wrong shape")));
            }
            if linalg::asymmetry(c) > 1e-10 || linalg::min_eigenvalue(c)? < -1e-8 {
                return Err(Error::invalid(format!("block {b} covariance is not symmetric PSD")));
            }
        }
        Ok(())
    }

    pub fn truth(&self) -> BlockTruth {
        BlockTruth {
            length: self.length,
            bounds: self.bounds.clone(),
            covariances: self.covariances.clone(),
            kinds: self.kinds.clone(),
        }
    }
}

/// Design of the ten-dimensional normal/crisis/normal experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeBlockDesign {
    pub dims: usize,
    pub length: usize,
    pub bounds: Vec<usize>,
    pub kinds: Vec<BlockKind>,
    /// Half-width of the uniform entries of `A` in normal blocks.
    pub c_normal: f64,
    /// Half-width of the uniform entries of `A` in crisis blocks.
    pub c_crisis: f64,
    /// Rows of `A`; fewer rows than `dims` gives a low-rank factor structure.
    pub factors: usize,
    pub ridge: f64,
}

impl Default for RegimeBlockDesign {
    fn default() -> Self {
        Self {
            dims: 10,
            length: 5000,
            bounds: vec![500, 3000],
            kinds: vec![BlockKind::Normal, BlockKind::Crisis, BlockKind::Normal],
            c_normal: 0.5,
            c_crisis: 2.0,
            factors: 3,
            ridge: 0.01,
        }
    }
}

impl RegimeBlockDesign {
    /// Draw one covariance per block (stream 1 of the seed) and build the spec.
    pub fn spec(&self, seed: u64) -> Result<RegimeBlockSpec> {
        let mut rng = rng_for(seed);
        rng.set_stream(1);
        let covariances = self
            .kinds
            .iter()
            .map(|k| {
                let c = match k {
                    BlockKind::Normal => self.c_normal,
                    BlockKind::Crisis => self.c_crisis,
                };
                random_covariance(&mut rng, self.dims, self.factors, c, self.ridge)
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = RegimeBlockSpec {
            dims: self.dims,
            length: self.length,
            bounds: self.bounds.clone(),
            covariances,
            kinds: self.kinds.clone(),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `AᵀA + ridge·I` with `A` a `factors x dims` matrix of `U[-c, c]` entries.
pub fn random_covariance<R: Rng>(
    rng: &mut R,
    dims: usize,
    factors: usize,
    c: f64,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    if dims == 0 || factors == 0 || !(c > 0.0) || !(ridge >= 0.0) {
        return Err(Error::invalid(
            "random covariance needs dims, factors, c > 0 and ridge >= 0",
        ));
    }
    let a = DMatrix::from_fn(factors, dims, |_, _| rng.random_range(-c..=c));
    let mut cov = a.transpose() * a + DMatrix::identity(dims, dims) * ridge;
    linalg::symmetrize(&mut cov);
    Ok(cov)
}

/// I.i.d. zero-mean normal rows with the covariance of the enclosing block.
pub fn gen_regime_blocks(spec: &RegimeBlockSpec) -> Result<(ReturnPanel, BlockTruth)> {
    spec.validate()?;
    let factors = spec
        .covariances
        .iter()
        .map(linalg::covariance_factor)
        .collect::<Result<Vec<_>>>()?;
    let truth = spec.truth();
    let mut rng = rng_for(spec.seed);
    let mut returns = DMatrix::zeros(spec.length, spec.dims);
    for t in 0..spec.length {
        let r = &factors[truth.block_of(t)] * normal_vector(&mut rng, spec.dims);
        returns.row_mut(t).copy_from(&r.transpose());
    }
    Ok((
        ReturnPanel::with_index_labels(returns, asset_names(spec.dims))?,
        truth,
    ))
}

/// Frobenius distance between two covariance matrices.
pub fn covariance_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "cannot compare {:?} and {:?} matrices",
            a.shape(),
            b.shape()
        )));
    }
    Ok(linalg::frobenius_distance(a, b))
}

/// Simulate GARCH(1,1) after a burn-in started at the unconditional variance.
pub fn simulate_garch(params: &GarchParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    let mut h = params.unconditional_variance()?;
    let mut rng = rng_for(seed);
    let mut out = Vec::with_capacity(n);
    let mut eps_sq = h;
    for t in 0..(BURN_IN + n) {
        h = params.step(h, eps_sq);
        let z: f64 = rng.sample(StandardNormal);
        let eps = h.sqrt() * z;
        eps_sq = eps * eps;
        if t >= BURN_IN {
            out.push(params.mu + eps);
        }
    }
    Ok(out)
}

/// Simulate the regime-switching GARCH model.
///
/// The regime path is a Markov chain; each observation is drawn from the
/// regime-conditional normal whose variance is computed by the filter
/// recursion on past observations, so the Hamilton filter is the exact
/// posterior for this process. Returns the series and the regime path
/// (0 = regime 1, 1 = regime 2).
pub fn simulate_mrs_garch(params: &MrsGarchParams, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<usize>)> {
    params.validate()?;
    let pi = mrs_garch::stationary_distribution(params.p, params.q)?;
    let mut h0 = 0.0;
    for i in 0..2 {
        h0 += pi[i]
            * params.regime_unconditional_variance(i).ok_or(Error::NonStationary(
                params.alpha[i] + params.beta[i],
            ))?;
    }
    let mut rng = rng_for(seed);
    let u: f64 = rng.random();
    let mut regime = usize::from(u >= pi[0]);
    let mut filtered = pi;
    let mut h_prev = [h0; 2];
    let mut y_prev = pi[0] * params.mu[0] + pi[1] * params.mu[1];

    let mut ys = Vec::with_capacity(n);
    let mut regimes = Vec::with_capacity(n);
    for t in 0..(BURN_IN + n) {
        let (h, ahead) = mrs_garch::next_variances(filtered, h_prev, y_prev, params).ok_or(
            Error::FilterDegeneracy {
                step: t,
                reason: "zero ex-ante probability while simulating".into(),
            },
        )?;
        let u: f64 = rng.random();
        regime = usize::from(u >= params.transition(regime, 0));
        let z: f64 = rng.sample(StandardNormal);
        let y = params.mu[regime] + h[regime].sqrt() * z;
        let (_, post) = mrs_garch::weigh(y, params.mu, h, ahead).ok_or(Error::FilterDegeneracy {
            step: t,
            reason: "regime densities underflowed while simulating".into(),
        })?;
        filtered = post;
        h_prev = h;
        y_prev = y;
        if t >= BURN_IN {
            ys.push(y);
            regimes.push(regime);
        }
    }
    Ok((ys, regimes))
}

/// Metadata written next to a generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSidecar {
    pub generator: String,
    pub seed: u64,
    pub prng: String,
    pub normal_sampler: String,
    pub spec: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<BlockTruth>,
}

impl SimulationSidecar {
    pub fn new<S: Serialize>(generator: &str, seed: u64, spec: &S, truth: Option<BlockTruth>) -> Result<Self> {
        Ok(Self {
            generator: generator.to_string(),
            seed,
            prng: PRNG_NAME.to_string(),
            normal_sampler: NORMAL_SAMPLER.to_string(),
            spec: serde_json::to_value(spec)?,
            truth,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Path of the sidecar that belongs to a CSV file (`x.csv` → `x.json`).
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Write `<dir>/<stem>.csv` and `<dir>/<stem>.json`; returns the CSV path.
pub fn write_simulation(dir: &Path, stem: &str, panel: &ReturnPanel, sidecar: &SimulationSidecar) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{stem}.csv"));
    write_csv(panel, std::fs::File::create(&csv)?)?;
    let meta = std::fs::File::create(sidecar_path(&csv))?;
    serde_json::to_writer_pretty(meta, sidecar)?;
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_std(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
    }

    #[test]
    fn constant_vol_square_wave() {
        let spec = SquareWaveSpec {
            period: 100,
            vol_low: vec![0.7, 1.3],
            vol_high: vec![0.7, 1.3],
            correlation: 0.0,
            length: 10_000,
            seed: 3,
        };
        let (panel, _) = gen_square_wave(&spec).unwrap();
        for (j, target) in [0.7, 1.3].iter().enumerate() {
            let s = sample_std(&panel.column(j));
            assert!((s / target - 1.0).abs() < 0.05, "{s}");
        }
    }

    #[test]
    fn square_wave_correlation() {
        let spec = SquareWaveSpec {
            length: 10_000,
            ..SquareWaveSpec::preset(11)
        };
        let (panel, vols) = gen_square_wave(&spec).unwrap();
        // standardize by the true vol so both regimes share one correlation
        let z: Vec<(f64, f64)> = (0..spec.length)
            .map(|t| {
                (
                    panel.returns()[(t, 0)] / vols[(t, 0)],
                    panel.returns()[(t, 1)] / vols[(t, 1)],
                )
            })
            .collect();
        let m = DMatrix::from_fn(spec.length, 2, |t, j| if j == 0 { z[t].0 } else { z[t].1 });
        let c = linalg::sample_correlation(&m).unwrap();
        assert!((c[(0, 1)] - 0.1).abs() < 0.03, "{}", c[(0, 1)]);
    }

    #[test]
    fn square_wave_segments() {
        let spec = SquareWaveSpec {
            period: 1000,
            length: 4000,
            ..SquareWaveSpec::preset(5)
        };
        let (panel, vols) = gen_square_wave(&spec).unwrap();
        for seg in 0..8 {
            let rows: Vec<usize> = (seg * 500..(seg + 1) * 500).collect();
            for j in 0..2 {
                let x: Vec<f64> = rows.iter().map(|&t| panel.returns()[(t, j)]).collect();
                let s = sample_std(&x);
                assert!((s / vols[(rows[0], j)] - 1.0).abs() < 0.08, "segment {seg}: {s}");
            }
        }
        assert_eq!(spec.upward_switches(), vec![500, 1500, 2500, 3500]);
    }

    #[test]
    fn square_wave_is_deterministic() {
        let a = gen_square_wave(&SquareWaveSpec::preset(9)).unwrap();
        let b = gen_square_wave(&SquareWaveSpec::preset(9)).unwrap();
        assert_eq!(a.0.returns(), b.0.returns());
        let c = gen_square_wave(&SquareWaveSpec::preset(10)).unwrap();
        assert_ne!(a.0.returns(), c.0.returns());
    }

    #[test]
    fn identity_block() {
        let spec = RegimeBlockSpec {
            dims: 3,
            length: 20_000,
            bounds: vec![],
            covariances: vec![DMatrix::identity(3, 3)],
            kinds: vec![BlockKind::Normal],
            seed: 1,
        };
        let (panel, _) = gen_regime_blocks(&spec).unwrap();
        let s = linalg::sample_covariance(panel.returns());
        assert!(covariance_distance(&s, &DMatrix::identity(3, 3)).unwrap() < 0.05);
    }

    #[test]
    fn preset_bounds() {
        let spec = RegimeBlockDesign::default().spec(4).unwrap();
        let (panel, truth) = gen_regime_blocks(&spec).unwrap();
        assert_eq!(panel.n_obs(), 5000);
        assert_eq!(panel.n_assets(), 10);
        assert_eq!(truth.bounds, vec![500, 3000]);
        assert_eq!(truth.block_of(499), 0);
        assert_eq!(truth.block_of(500), 1);
        assert_eq!(truth.kind_at(2999), BlockKind::Crisis);
        assert_eq!(truth.kind_at(3000), BlockKind::Normal);
    }

    #[test]
    fn block_variance_ratio() {
        let spec = RegimeBlockSpec {
            dims: 1,
            length: 8000,
            bounds: vec![4000],
            covariances: vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1) * 4.0],
            kinds: vec![BlockKind::Normal, BlockKind::Crisis],
            seed: 2,
        };
        let (panel, _) = gen_regime_blocks(&spec).unwrap();
        let x = panel.column(0);
        let ratio = sample_std(&x[4000..]).powi(2) / sample_std(&x[..4000]).powi(2);
        assert!((ratio / 4.0 - 1.0).abs() < 0.15, "{ratio}");
    }

    #[test]
    fn distance_examples() {
        let i = DMatrix::identity(2, 2);
        assert_eq!(covariance_distance(&i, &i).unwrap(), 0.0);
        let d = covariance_distance(&i, &DMatrix::zeros(2, 2)).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert!(covariance_distance(&i, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn invalid_specs() {
        let mut s = SquareWaveSpec::preset(1);
        s.period = 1;
        assert!(s.validate().is_err());
        let mut d = RegimeBlockDesign::default().spec(1).unwrap();
        d.bounds = vec![3000, 500];
        assert!(d.validate().is_err());
    }

    #[test]
    fn garch_simulation_moments() {
        let p = GarchParams {
            omega: 0.05,
            alpha: 0.1,
            beta: 0.85,
            mu: 0.0,
        };
        let y = simulate_garch(&p, 20_000, 8).unwrap();
        let v = sample_std(&y).powi(2);
        assert!((v - 1.0).abs() < 0.15, "{v}");
    }

    #[test]
    fn mrs_simulation_regimes() {
        let p = MrsGarchParams {
            omega: [0.5, 4.5],
            alpha: [0.05, 0.05],
            beta: [0.45, 0.45],
            mu: [0.0, 0.0],
            p: 0.02,
            q: 0.02,
        };
        let (y, s) = simulate_mrs_garch(&p, 5000, 1).unwrap();
        assert_eq!(y.len(), 5000);
        let share = s.iter().sum::<usize>() as f64 / 5000.0;
        assert!(share > 0.2 && share < 0.8, "{share}");
        let var_in = |r: usize| {
            let v: Vec<f64> = y.iter().zip(&s).filter(|(_, k)| **k == r).map(|(y, _)| *y).collect();
            sample_std(&v).powi(2)
        };
        let ratio = var_in(1) / var_in(0);
        assert!(ratio > 5.0 && ratio < 15.0, "{ratio}");
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SquareWaveSpec::preset(7);
        let (panel, _) = gen_square_wave(&spec).unwrap();
        let meta = SimulationSidecar::new("square-wave", 7, &spec, None).unwrap();
        let csv = write_simulation(dir.path(), "sq", &panel, &meta).unwrap();
        let back = SimulationSidecar::read(&sidecar_path(&csv)).unwrap();
        assert_eq!(back, meta);
        let reread = crate::data_io::read_csv_path(&csv, crate::data_io::CsvValues::Returns).unwrap();
        assert_eq!(reread.returns(), panel.returns());
    }
}
