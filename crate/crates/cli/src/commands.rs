use std::io::Write;
use std::path::{Path, PathBuf};

use regime_ogarch::data_io::{read_csv_path, write_csv, CsvValues};
use regime_ogarch::evaluation::{dm_table, loss_table};
use regime_ogarch::garch::{self, GarchFit};
use regime_ogarch::mrs_garch::{self, MrsFitOptions};
use regime_ogarch::pipeline::{
    compare_bundles, component_sweep, forecast_latest, lr_tests, read_bundle, run_backtest, sweep_table,
    write_bundle, Bundle, DateRange,
};
use regime_ogarch::portfolio::performance_table;
use regime_ogarch::simulation::{
    gen_regime_blocks, gen_square_wave, sidecar_path, write_simulation, SimulationSidecar,
};
use regime_ogarch::{
    BacktestConfig, ExcludedComponents, ModelKind, NormalizationMode, OptimizerConfig, RegimeBlockDesign,
    ReturnPanel, SquareWaveSpec,
};
use serde::Serialize;

use crate::args::*;
use crate::CliError;

type CliResult<T = ()> = Result<T, CliError>;

/// Write to stdout, ignoring a closed pipe.
fn say(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn load(data: &DataArgs) -> CliResult<ReturnPanel> {
    let values = if data.prices {
        CsvValues::Prices
    } else {
        CsvValues::Returns
    };
    Ok(read_csv_path(&data.data, values)?)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult {
    match out {
        Some(path) => {
            serde_json::to_writer_pretty(std::fs::File::create(path).map_err(regime_ogarch::Error::from)?, value)
                .map_err(regime_ogarch::Error::from)?;
            say(&format!("{}\n", path.display()));
        }
        None => {
            let text = serde_json::to_string_pretty(value).map_err(regime_ogarch::Error::from)?;
            say(&format!("{text}\n"));
        }
    }
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> CliResult {
    let csv = match args.preset {
        Preset::SquareWave => {
            let mut spec = SquareWaveSpec::preset(args.seed);
            if let Some(n) = args.length {
                spec.length = n;
            }
            let (panel, vols) = gen_square_wave(&spec)?;
            let sidecar = SimulationSidecar::new("square_wave", args.seed, &spec, None)?;
            let csv = write_simulation(&args.out, "square_wave", &panel, &sidecar)?;
            // true volatility path, same layout as the returns
            let truth = ReturnPanel::new(panel.dates().to_vec(), vols, panel.asset_names().to_vec())?;
            let file = std::fs::File::create(args.out.join("square_wave_true_vol.csv"))
                .map_err(regime_ogarch::Error::from)?;
            write_csv(&truth, file)?;
            csv
        }
        Preset::Regime10d => {
            let mut design = RegimeBlockDesign::default();
            if let Some(n) = args.length {
                design.length = n;
            }
            let spec = design.spec(args.seed)?;
            let (panel, truth) = gen_regime_blocks(&spec)?;
            let sidecar = SimulationSidecar::new("regime_blocks", args.seed, &design, Some(truth))?;
            write_simulation(&args.out, "regime_10d", &panel, &sidecar)?
        }
    };
    say(&format!("{}\n", csv.display()));
    Ok(())
}

pub fn fit(args: &FitArgs) -> CliResult {
    let panel = load(&args.data)?;
    let t = panel.n_obs();
    let r = args.window.unwrap_or(t).min(t);
    let panel = if r < t { panel.tail(r)? } else { panel };
    match args.model {
        FitModel::Garch | FitModel::Mrs => {
            let j = match &args.column {
                Some(name) => panel
                    .asset_index(name)
                    .ok_or_else(|| CliError::Usage(format!("no column named `{name}`")))?,
                None => 0,
            };
            let y = panel.column(j);
            if args.model == FitModel::Garch {
                let fit: GarchFit = garch::garch_fit_with(&y, &OptimizerConfig::default())?;
                emit(&fit, args.out.as_deref())
            } else {
                let options = MrsFitOptions {
                    zero_means: args.zero_means,
                    ..Default::default()
                };
                let fit = mrs_garch::mrs_fit_with(&y, &options)?;
                emit(&fit, args.out.as_deref())
            }
        }
        FitModel::Ogarch | FitModel::Mrsogarch => {
            let config = BacktestConfig {
                model: if args.model == FitModel::Ogarch {
                    ModelKind::Ogarch
                } else {
                    ModelKind::Mrsogarch
                },
                n_components: args.components,
                window: regime_ogarch::WindowSpec {
                    in_sample_len: r,
                    horizon: 1,
                    step: 1,
                },
                zero_means: args.zero_means,
                ..Default::default()
            };
            let latest = forecast_latest(&panel, &config)?;
            #[derive(Serialize)]
            struct PanelFit<'a> {
                as_of: &'a str,
                in_sample_len: usize,
                basis: &'a Option<regime_ogarch::PcaBasis>,
                models: &'a [regime_ogarch::pipeline::ParamRecord],
            }
            emit(
                &PanelFit {
                    as_of: &latest.as_of,
                    in_sample_len: latest.in_sample_len,
                    basis: &latest.basis,
                    models: &latest.models,
                },
                args.out.as_deref(),
            )
        }
    }
}

/// Config file (or defaults) with command-line overrides applied.
fn build_config(m: &ModelArgs, n_obs: usize) -> CliResult<BacktestConfig> {
    let mut c = match &m.config {
        Some(path) => BacktestConfig::read(path)?,
        None => BacktestConfig {
            window: regime_ogarch::WindowSpec {
                in_sample_len: BacktestConfig::default().window.in_sample_len.min(n_obs.saturating_sub(1).max(1)),
                ..BacktestConfig::default().window
            },
            ..Default::default()
        },
    };
    if let Some(model) = m.model {
        c.model = match model {
            PanelModel::Ewma => ModelKind::Ewma,
            PanelModel::Ogarch => ModelKind::Ogarch,
            PanelModel::Mrsogarch => ModelKind::Mrsogarch,
        };
    }
    if let Some(k) = m.components {
        c.n_components = k;
    }
    if let Some(h) = m.horizon {
        c.window.horizon = h;
    }
    if let Some(r) = m.window {
        c.window.in_sample_len = r;
    }
    if let Some(l) = m.lambda {
        c.ewma_lambda = l;
    }
    if let Some(n) = m.refit_every {
        c.refit_every = n;
    }
    c.expanding |= m.expanding;
    c.zero_means |= m.zero_means;
    c.lock_degenerate |= m.lock_degenerate;
    if m.full_sample_normalization {
        c.normalization = NormalizationMode::FullSample;
    }
    if m.truncate {
        c.excluded = ExcludedComponents::TruncateToZero;
    }
    Ok(c)
}

pub fn forecast(args: &ForecastArgs) -> CliResult {
    let panel = load(&args.data)?;
    let config = build_config(&args.model, panel.n_obs())?;
    let latest = forecast_latest(&panel, &config)?;
    emit(&latest, args.out.as_deref())
}

fn parse_crisis(spec: &str) -> CliResult<DateRange> {
    let (start, end) = spec
        .split_once(':')
        .ok_or_else(|| CliError::Usage(format!("crisis range `{spec}` is not START:END")))?;
    Ok(DateRange {
        start: start.to_string(),
        end: end.to_string(),
    })
}

pub fn backtest(args: &BacktestArgs) -> CliResult {
    let panel = load(&args.data)?;
    let mut config = build_config(&args.model, panel.n_obs())?;
    if let Some(s) = args.step {
        config.window.step = s;
    }
    for c in &args.crisis {
        config.crisis.push(parse_crisis(c)?);
    }
    let out: PathBuf = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("bundle"));
    config.output_dir = Some(out.clone());
    let result = run_backtest(&panel, &config)?;
    write_bundle(&result, &out)?;

    let label = format!("{:?}", config.model).to_uppercase();
    let mut rows = vec![(label.clone(), result.report.performance)];
    if let Some(p) = result.report.performance_crisis {
        rows.push((format!("{label} crisis"), p));
    }
    let rows: Vec<(&str, _)> = rows.iter().map(|(l, p)| (l.as_str(), *p)).collect();
    say(&format!(
        "{} origins, {} carried forward\n{}{}{}\n",
        result.origins.len(),
        result.report.failures,
        performance_table(&rows),
        loss_table(&[(label.as_str(), result.report.losses)]),
        out.display()
    ));
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> CliResult {
    let panel = load(&args.data)?;
    let sidecar = SimulationSidecar::read(&sidecar_path(&args.data.data))?;
    let truth = sidecar
        .truth
        .ok_or_else(|| regime_ogarch::Error::Contract("sidecar has no block truth".into()))?;
    let mut config = build_config(&args.model, panel.n_obs())?;
    if let Some(s) = args.step {
        config.window.step = s;
    }
    let k: Vec<usize> = if args.k.is_empty() {
        (1..=panel.n_assets()).collect()
    } else {
        args.k.clone()
    };
    let rows = component_sweep(&panel, &truth, &config, &k)?;
    say(&sweep_table(&rows));
    Ok(())
}

fn model_label(b: &Bundle) -> String {
    format!("{:?}", b.config.model).to_uppercase()
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult {
    if args.bundles.is_empty() && args.dm.is_none() && args.lr.is_none() {
        return Err(CliError::Usage("nothing to evaluate: give bundles, --dm or --lr".into()));
    }
    let mut json = serde_json::Map::new();
    let mut text = String::new();

    if !args.bundles.is_empty() {
        let bundles = args.bundles.iter().map(|p| read_bundle(p)).collect::<Result<Vec<_>, _>>()?;
        let labels: Vec<String> = bundles.iter().map(model_label).collect();
        let losses: Vec<(&str, _)> = labels.iter().zip(&bundles).map(|(l, b)| (l.as_str(), b.report.losses)).collect();
        let perf: Vec<(&str, _)> = labels
            .iter()
            .zip(&bundles)
            .map(|(l, b)| (l.as_str(), b.report.performance))
            .collect();
        text.push_str(&performance_table(&perf));
        text.push('\n');
        text.push_str(&loss_table(&losses));
        json.insert("reports".into(), serde_json::to_value(bundles.iter().map(|b| &b.report).collect::<Vec<_>>()).map_err(regime_ogarch::Error::from)?);
    }

    if let Some(pair) = &args.dm {
        let a = read_bundle(&pair[0])?;
        let b = read_bundle(&pair[1])?;
        let tau = args.horizon.unwrap_or(a.config.window.horizon);
        let rows = compare_bundles(&a, &b, tau)?;
        text.push_str(&format!("\nDM test, {} vs {}, horizon {tau}\n", model_label(&a), model_label(&b)));
        text.push_str(&dm_table(&rows));
        json.insert("dm".into(), serde_json::to_value(&rows).map_err(regime_ogarch::Error::from)?);
    }

    if let Some(pair) = &args.lr {
        let switching = read_bundle(&pair[0])?;
        let single = read_bundle(&pair[1])?;
        let tests = lr_tests(&switching, &single)?;
        text.push_str("\nLR test, switching vs single regime\n");
        text.push_str(&format!("{:<10} {:>8} {:>12} {:>4} {:>12}", "component", "origin", "LR", "df", "p-value"));
        for (d, _) in tests.first().map(|t| t.p_by_df.clone()).unwrap_or_default() {
            text.push_str(&format!(" {:>12}", format!("p(df={d})")));
        }
        text.push('\n');
        for t in &tests {
            text.push_str(&format!(
                "{:<10} {:>8} {:>12.4} {:>4} {:>12.4e}",
                t.component + 1,
                t.origin,
                t.test.statistic,
                t.test.df,
                t.test.p_value
            ));
            for (_, p) in &t.p_by_df {
                text.push_str(&format!(" {p:>12.4e}"));
            }
            text.push('\n');
        }
        json.insert("lr".into(), serde_json::to_value(&tests).map_err(regime_ogarch::Error::from)?);
    }

    if args.json {
        emit(&serde_json::Value::Object(json), None)
    } else {
        say(&text);
        Ok(())
    }
}
