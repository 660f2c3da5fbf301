use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regime-ogarch"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn simulate_square_wave_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--preset", "square-wave", "--seed", "7", "-o", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let csv = std::fs::read_to_string(out.join("square_wave.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1001);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("square_wave.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 7);
    assert!(out.join("square_wave_true_vol.csv").exists());
}

#[test]
fn regime_preset_sidecar_carries_truth() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--preset", "regime-10d", "--length", "3500", "-o", "."], dir.path());
    assert_eq!(code(&o), 0);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("regime_10d.json")).unwrap()).unwrap();
    assert_eq!(meta["truth"]["covariances"].as_array().unwrap().len(), 3);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["backtest", "--no-such-flag", "x.csv"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert!(o.stdout.is_empty());
    assert_eq!(code(&run(&["evaluate"], dir.path())), 1);
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["--help"], dir.path())), 0);
    assert_eq!(code(&run(&["--version"], dir.path())), 0);
}

#[test]
fn bad_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "date,a\n2020-01-01,abc\n").unwrap();
    let o = run(&["fit", "--model", "garch", "bad.csv"], dir.path());
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["fit", "--model", "garch", "missing.csv"], dir.path())), 2);
    // negative price
    std::fs::write(dir.path().join("px.csv"), "date,a\n1,100\n2,-1\n").unwrap();
    assert_eq!(code(&run(&["fit", "--model", "garch", "--prices", "px.csv"], dir.path())), 2);
}

fn bundle_rows(dir: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(dir.join("weights.csv")).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn backtest_and_dm_match_direct_formula() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&run(&["simulate", "--preset", "square-wave", "--seed", "3", "--length", "400", "-o", "."], p)), 0);
    for (model, out) in [("ogarch", "a"), ("ewma", "b")] {
        let o = run(
            &["backtest", "--model", model, "--components", "2", "--window", "200", "-o", out, "square_wave.csv"],
            p,
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = bundle_rows(&p.join("a"));
    let b = bundle_rows(&p.join("b"));
    // one row per origin 200..=399
    assert_eq!(a.len() - 1, 200);
    assert_eq!(std::fs::read_dir(p.join("a/forecasts")).unwrap().count(), 200);

    let col = |rows: &[Vec<String>], name: &str| -> Vec<f64> {
        let j = rows[0].iter().position(|h| h == name).unwrap();
        rows[1..].iter().map(|r| r[j].parse().unwrap()).collect()
    };
    let x = col(&a, "proxy");
    let (ha, hb) = (col(&a, "proxy_forecast"), col(&b, "proxy_forecast"));
    let d: Vec<f64> = (0..x.len())
        .map(|t| (x[t] * x[t] - ha[t]).powi(2) - (x[t] * x[t] - hb[t]).powi(2))
        .collect();
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let expected = m / (var / n).sqrt();

    let o = run(&["evaluate", "--dm", "a", "b", "--horizon", "1", "--json"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let row = v["dm"].as_array().unwrap().iter().find(|r| r[0] == "mse2").unwrap();
    let got = row[1]["statistic"].as_f64().unwrap();
    assert!((got - expected).abs() < 1e-9 * expected.abs().max(1.0), "{got} vs {expected}");

    let text = run(&["evaluate", "--dm", "a", "b", "--horizon", "5"], p);
    let text = String::from_utf8_lossy(&text.stdout);
    for label in ["MSE1", "MSE2", "MAD1", "MAD2", "R2LOG"] {
        assert!(text.contains(label));
    }
}

#[test]
fn forecast_emits_horizon_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    run(&["simulate", "--preset", "square-wave", "--length", "300", "-o", "."], p);
    let o = run(&["forecast", "--model", "ogarch", "--components", "2", "--window", "250", "--horizon", "5", "square_wave.csv"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["forecast"]["matrices"].as_array().unwrap().len(), 5);
    let w: f64 = v["weights"]["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    assert!((w - 1.0).abs() < 1e-10);
}

#[test]
fn lr_report_lists_three_df() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    run(&["simulate", "--preset", "square-wave", "--length", "260", "-o", "."], p);
    for (model, out) in [("mrsogarch", "s"), ("ogarch", "g")] {
        let o = run(
            &["backtest", "--model", model, "--components", "1", "--window", "250", "--zero-means", "-o", out, "square_wave.csv"],
            p,
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["evaluate", "--lr", "s", "g", "--json"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let lr = &v["lr"][0];
    assert_eq!(lr["test"]["df"], 5);
    assert_eq!(lr["p_by_df"].as_array().unwrap().len(), 3);
}
