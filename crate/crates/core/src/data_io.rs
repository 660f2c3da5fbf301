//! Return panels, normalization and rolling-window bookkeeping.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Date-indexed matrix of daily log returns, one column per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<String>,
    returns: DMatrix<f64>,
    asset_names: Vec<String>,
}

impl ReturnPanel {
    /// Build a panel, checking that dates strictly increase, every cell is
    /// finite, and there are at least two rows and one asset.
    pub fn new(dates: Vec<String>, returns: DMatrix<f64>, asset_names: Vec<String>) -> Result<Self> {
        let (t, i) = returns.shape();
        if t < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                available: t,
            });
        }
        if i == 0 {
            return Err(Error::invalid("panel has no assets"));
        }
        if dates.len() != t {
            return Err(Error::invalid(format!(
                "{} dates for {} rows",
                dates.len(),
                t
            )));
        }
        if asset_names.len() != i {
            return Err(Error::invalid(format!(
                "{} asset names for {} columns",
                asset_names.len(),
                i
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "dates must be strictly increasing (`{}` then `{}`)",
                w[0], w[1]
            )));
        }
        if let Some(pos) = returns.iter().position(|v| !v.is_finite()) {
            // column-major storage
            return Err(Error::invalid(format!(
                "missing or non-finite value at row {}, asset `{}`",
                pos % t,
                asset_names[pos / t]
            )));
        }
        Ok(Self {
            dates,
            returns,
            asset_names,
        })
    }

    /// Panel with zero-padded integer labels (`000000`, `000001`, ...), used for synthetic data.
    pub fn with_index_labels(returns: DMatrix<f64>, asset_names: Vec<String>) -> Result<Self> {
        let dates = (0..returns.nrows()).map(index_label).collect();
        Self::new(dates, returns, asset_names)
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn asset_names(&self) -> &[String] {
        &self.asset_names
    }

    pub fn n_obs(&self) -> usize {
        self.returns.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.returns.ncols()
    }

    /// Rows `range` of the return matrix.
    pub fn rows(&self, range: Range<usize>) -> DMatrix<f64> {
        self.returns.rows(range.start, range.len()).into_owned()
    }

    /// Copy of the first `n` rows.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n > self.n_obs() {
            return Err(Error::InsufficientData {
                needed: n,
                available: self.n_obs(),
            });
        }
        Self::new(
            self.dates[..n].to_vec(),
            self.rows(0..n),
            self.asset_names.clone(),
        )
    }

    /// The last `n` rows.
    pub fn tail(&self, n: usize) -> Result<Self> {
        let t = self.n_obs();
        if n > t {
            return Err(Error::InsufficientData {
                needed: n,
                available: t,
            });
        }
        Self::new(
            self.dates[t - n..].to_vec(),
            self.rows(t - n..t),
            self.asset_names.clone(),
        )
    }

    /// Single-asset column as a vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.returns.column(j).iter().copied().collect()
    }

    pub fn asset_index(&self, name: &str) -> Option<usize> {
        self.asset_names.iter().position(|n| n == name)
    }
}

pub(crate) fn index_label(t: usize) -> String {
    format!("{t:06}")
}

/// Elementwise `ln(p_t) - ln(p_{t-1})`. The returned panel is dated by the later price row.
pub fn log_returns(
    dates: &[String],
    asset_names: &[String],
    prices: &DMatrix<f64>,
) -> Result<ReturnPanel> {
    let (t, i) = prices.shape();
    if t < 3 {
        // two return rows are needed for a valid panel
        return Err(Error::InsufficientData {
            needed: 3,
            available: t,
        });
    }
    if let Some(pos) = prices.iter().position(|p| !(*p > 0.0) || !p.is_finite()) {
        return Err(Error::invalid(format!(
            "non-positive price {} at row {}, asset {}",
            prices.as_slice()[pos],
            pos % t,
            pos / t
        )));
    }
    let logs = prices.map(f64::ln);
    let returns = DMatrix::from_fn(t - 1, i, |r, c| logs[(r + 1, c)] - logs[(r, c)]);
    ReturnPanel::new(dates[1..].to_vec(), returns, asset_names.to_vec())
}

/// Per-asset mean and unbiased standard deviation over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub means: Vec<f64>,
    pub vols: Vec<f64>,
}

impl NormalizationStats {
    /// Statistics of `panel` rows in `window`. Fails on any zero-variance asset.
    pub fn from_window(panel: &ReturnPanel, window: Range<usize>) -> Result<Self> {
        if window.is_empty() || window.end > panel.n_obs() {
            return Err(Error::contract(format!(
                "normalization window {:?} outside panel of {} rows",
                window,
                panel.n_obs()
            )));
        }
        let n = window.len() as f64;
        let mut means = Vec::with_capacity(panel.n_assets());
        let mut vols = Vec::with_capacity(panel.n_assets());
        for j in 0..panel.n_assets() {
            let col = panel.returns.column(j);
            let slice = col.rows(window.start, window.len());
            let mean = slice.sum() / n;
            let ss: f64 = slice.iter().map(|r| (r - mean) * (r - mean)).sum();
            let vol = if window.len() > 1 {
                (ss / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            if !(vol > 0.0) {
                return Err(Error::DegenerateAsset(panel.asset_names[j].clone()));
            }
            means.push(mean);
            vols.push(vol);
        }
        Ok(Self { means, vols })
    }

    /// `(r - mean) / vol` applied column by column.
    pub fn apply(&self, returns: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if returns.ncols() != self.means.len() {
            return Err(Error::contract(format!(
                "stats cover {} assets, matrix has {} columns",
                self.means.len(),
                returns.ncols()
            )));
        }
        Ok(DMatrix::from_fn(returns.nrows(), returns.ncols(), |r, c| {
            (returns[(r, c)] - self.means[c]) / self.vols[c]
        }))
    }
}

/// Normalize every row of `panel` with statistics computed over `window` only.
pub fn normalize(
    panel: &ReturnPanel,
    window: Range<usize>,
) -> Result<(DMatrix<f64>, NormalizationStats)> {
    let stats = NormalizationStats::from_window(panel, window)?;
    let x = stats.apply(&panel.returns)?;
    Ok((x, stats))
}

/// Rolling protocol parameters: in-sample length, forecast horizon and origin step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub in_sample_len: usize,
    pub horizon: usize,
    pub step: usize,
}

/// Minimum in-sample length accepted for model estimation.
pub const MIN_IN_SAMPLE: usize = 30;

impl WindowSpec {
    pub fn new(in_sample_len: usize, horizon: usize, step: usize) -> Result<Self> {
        let spec = Self {
            in_sample_len,
            horizon,
            step,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Estimation-grade check: `R >= 30`, `τ >= 1`, `step >= 1`.
    pub fn validate(&self) -> Result<()> {
        if self.in_sample_len < MIN_IN_SAMPLE {
            return Err(Error::invalid(format!(
                "in-sample length {} is below the minimum of {}",
                self.in_sample_len, MIN_IN_SAMPLE
            )));
        }
        self.validate_shape()
    }

    fn validate_shape(&self) -> Result<()> {
        if self.in_sample_len == 0 || self.horizon == 0 || self.step == 0 {
            return Err(Error::invalid(
                "in-sample length, horizon and step must all be at least 1",
            ));
        }
        Ok(())
    }
}

/// One rolling estimation window: rows `in_sample` are used for fitting and the
/// forecast covers rows `origin .. origin + horizon`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub in_sample: Range<usize>,
    pub origin: usize,
}

/// Fixed-length rolling windows. Origins are end-exclusive row indices of the
/// in-sample range and never exceed `T - τ`.
pub fn rolling_windows(panel: &ReturnPanel, spec: &WindowSpec) -> Result<Vec<Window>> {
    windows_for(panel.n_obs(), spec, false)
}

/// Expanding windows: in-sample always starts at row 0, the first origin is `R`.
pub fn expanding_windows(panel: &ReturnPanel, spec: &WindowSpec) -> Result<Vec<Window>> {
    windows_for(panel.n_obs(), spec, true)
}

pub(crate) fn windows_for(n_obs: usize, spec: &WindowSpec, expanding: bool) -> Result<Vec<Window>> {
    spec.validate_shape()?;
    let needed = spec.in_sample_len + spec.horizon;
    if needed > n_obs {
        return Err(Error::InsufficientData {
            needed,
            available: n_obs,
        });
    }
    let last = n_obs - spec.horizon;
    Ok((spec.in_sample_len..=last)
        .step_by(spec.step)
        .map(|origin| Window {
            in_sample: if expanding {
                0..origin
            } else {
                origin - spec.in_sample_len..origin
            },
            origin,
        })
        .collect())
}

/// Whether CSV cells hold prices (converted with [`log_returns`]) or returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvValues {
    Prices,
    Returns,
}

/// Read a `date,<asset1>,...` CSV.
pub fn read_csv<R: Read>(reader: R, values: CsvValues) -> Result<ReturnPanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::invalid("CSV needs a date column and at least one asset"));
    }
    let asset_names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let mut dates = Vec::new();
    let mut cells = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::invalid(format!(
                "row {} has {} fields, header has {}",
                row + 1,
                record.len(),
                headers.len()
            )));
        }
        dates.push(record[0].trim().to_string());
        for (j, field) in record.iter().skip(1).enumerate() {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| {
                Error::invalid(format!(
                    "row {}, asset `{}`: cannot parse `{}` as a number",
                    row + 1,
                    asset_names[j],
                    field
                ))
            })?;
            cells.push(v);
        }
    }
    let t = dates.len();
    let matrix = DMatrix::from_row_slice(t, asset_names.len(), &cells);
    match values {
        CsvValues::Returns => ReturnPanel::new(dates, matrix, asset_names),
        CsvValues::Prices => log_returns(&dates, &asset_names, &matrix),
    }
}

pub fn read_csv_path(path: &Path, values: CsvValues) -> Result<ReturnPanel> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), values)
}

/// Write the panel as a returns CSV.
pub fn write_csv<W: Write>(panel: &ReturnPanel, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(panel.asset_names.iter().cloned());
    wtr.write_record(&header)?;
    for (t, date) in panel.dates.iter().enumerate() {
        let mut record = vec![date.clone()];
        record.extend(panel.returns.row(t).iter().map(|v| format!("{v:e}")));
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i}")).collect()
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(index_label).collect()
    }

    #[test]
    fn flat_and_rising_prices() {
        let prices = DMatrix::from_row_slice(3, 2, &[100.0, 100.0, 100.0, 101.0, 100.0, 101.0]);
        let panel = log_returns(&labels(3), &names(2), &prices).unwrap();
        assert_eq!(panel.n_obs(), 2);
        assert_eq!(panel.returns()[(0, 0)], 0.0);
        assert!((panel.returns()[(0, 1)] - 1.01_f64.ln()).abs() < 1e-15);
        assert!((panel.returns()[(0, 1)] - 0.00995).abs() < 1e-5);
        assert_eq!(panel.dates()[0], "000001");
    }

    #[test]
    fn non_positive_price_rejected() {
        let prices = DMatrix::from_row_slice(3, 1, &[100.0, 0.0, 101.0]);
        assert!(matches!(
            log_returns(&labels(3), &names(1), &prices),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn constant_column_is_degenerate() {
        let r = DMatrix::from_row_slice(3, 2, &[0.1, 0.0, 0.2, 0.0, 0.3, 0.0]);
        let panel = ReturnPanel::new(labels(3), r, names(2)).unwrap();
        match normalize(&panel, 0..3) {
            Err(Error::DegenerateAsset(name)) => assert_eq!(name, "a1"),
            other => panic!("expected degenerate asset, got {other:?}"),
        }
    }

    #[test]
    fn symmetric_pair_normalizes_to_unit_std() {
        let r = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let panel = ReturnPanel::new(labels(2), r, names(1)).unwrap();
        let (x, stats) = normalize(&panel, 0..2).unwrap();
        let v = std::f64::consts::SQRT_2;
        assert!((stats.vols[0] - v).abs() < 1e-15);
        assert!((x[(0, 0)] + 1.0 / v).abs() < 1e-15);
        assert!((x[(1, 0)] - 1.0 / v).abs() < 1e-15);
        let sd = ((x[(0, 0)].powi(2) + x[(1, 0)].powi(2)) / 1.0).sqrt();
        assert!((sd - 1.0).abs() < 1e-15);
    }

    #[test]
    fn window_enumeration() {
        let panel = ReturnPanel::with_index_labels(DMatrix::zeros(5, 1), names(1)).unwrap();
        let spec = WindowSpec {
            in_sample_len: 3,
            horizon: 1,
            step: 1,
        };
        let w = rolling_windows(&panel, &spec).unwrap();
        assert_eq!(w.iter().map(|w| w.origin).collect::<Vec<_>>(), vec![3, 4]);
        assert_eq!(w[0].in_sample, 0..3);
        assert_eq!(w[1].in_sample, 1..4);
    }

    #[test]
    fn window_count_and_boundary() {
        let panel = ReturnPanel::with_index_labels(DMatrix::zeros(250, 1), names(1)).unwrap();
        let spec = WindowSpec::new(200, 1, 1).unwrap();
        assert_eq!(rolling_windows(&panel, &spec).unwrap().len(), 50);

        let small = ReturnPanel::with_index_labels(DMatrix::zeros(10, 1), names(1)).unwrap();
        let spec = WindowSpec {
            in_sample_len: 9,
            horizon: 2,
            step: 1,
        };
        assert!(matches!(
            rolling_windows(&small, &spec),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn expanding_windows_start_at_zero() {
        let panel = ReturnPanel::with_index_labels(DMatrix::zeros(40, 1), names(1)).unwrap();
        let spec = WindowSpec::new(30, 1, 5).unwrap();
        let w = expanding_windows(&panel, &spec).unwrap();
        assert_eq!(w[0].in_sample, 0..30);
        assert_eq!(w[1].in_sample, 0..35);
        assert_eq!(w.last().unwrap().origin, 35);
    }

    #[test]
    fn short_window_spec_rejected() {
        assert!(WindowSpec::new(29, 1, 1).is_err());
        assert!(WindowSpec::new(30, 0, 1).is_err());
    }

    #[test]
    fn dates_must_increase() {
        let r = DMatrix::zeros(2, 1);
        let err = ReturnPanel::new(vec!["b".into(), "a".into()], r, names(1));
        assert!(err.is_err());
    }

    #[test]
    fn csv_prices_and_returns() {
        let text = "date,x,y\n2020-01-01,100,50\n2020-01-02,101,50\n2020-01-03,100,51\n";
        let panel = read_csv(text.as_bytes(), CsvValues::Prices).unwrap();
        assert_eq!(panel.asset_names(), &["x".to_string(), "y".to_string()]);
        assert_eq!(panel.n_obs(), 2);
        assert!((panel.returns()[(1, 1)] - (51.0_f64 / 50.0).ln()).abs() < 1e-15);

        let mut buf = Vec::new();
        write_csv(&panel, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), CsvValues::Returns).unwrap();
        assert_eq!(back, panel);
    }

    #[test]
    fn csv_rejects_missing_cells() {
        let text = "date,x\n2020-01-01,0.1\n2020-01-02,\n2020-01-03,0.2\n";
        assert!(read_csv(text.as_bytes(), CsvValues::Returns).is_err());
    }
}
