//! CLI contract tests: exit codes and output shapes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn run(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_newsalpha"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("newsalpha_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn usage_errors_exit_1() {
    let out = run(&["metrics", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage") || text.contains("usage"), "{text}");

    let out = run(&["not-a-command"]);
    assert_eq!(out.status.code(), Some(1));

    // --help is not an error.
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let dir = temp_dir("data_err");
    let out = run(&[
        "metrics",
        "--panel",
        "does-not-exist.json",
        "--market",
        "also-missing.json",
        "--horizon",
        "5",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

/// Build a tiny synthetic world via the CLI and return (dir, synth_dir, store_dir).
fn tiny_world(name: &str) -> (PathBuf, PathBuf, PathBuf) {
    let dir = temp_dir(name);
    write(
        &dir.join("synth.json"),
        r#"{
  "n_tickers": 6, "n_days": 100, "start_date": "2024-01-02",
  "base_vol_calm": 0.01, "base_vol_shock": 0.025,
  "vix_calm_level": 16.0, "vix_shock_level": 35.0,
  "vix_mean_reversion": 0.25, "vix_noise": 0.8,
  "corr_calm": 0.15, "corr_shock": 0.6,
  "p_calm_to_shock": 0.02, "p_shock_to_calm": 0.1,
  "event_rate": 0.3, "alpha_scale": 0.15,
  "event_horizon_min": 3, "event_horizon_max": 6, "seed": 5
}"#,
    );
    let synth_dir = dir.join("synth");
    let out = run(&[
        "synth",
        "--config",
        dir.join("synth.json").to_str().unwrap(),
        "--out",
        synth_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let store_dir = dir.join("store");
    let out = run(&[
        "ingest",
        "--store",
        store_dir.to_str().unwrap(),
        "--replay",
        synth_dir.join("headlines.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    (dir, synth_dir, store_dir)
}

#[test]
fn metrics_command_emits_report_and_exits_0() {
    let (dir, synth_dir, store_dir) = tiny_world("metrics_ok");
    write(
        &dir.join("extract.json"),
        &format!(
            r#"{{
  "store_dir": {store:?}, "market_path": {market:?},
  "template_path": "../../prompts/v0-baseline.txt",
  "window": {{ "start": "2024-01-02", "end": "2024-04-30" }},
  "universe": null,
  "extractor": {{ "oracle": {{ "noise_sigma": 0.0, "seed": 5 }} }},
  "cache": true
}}"#,
            store = store_dir,
            market = synth_dir.join("market.json"),
        ),
    );
    let extract_dir = dir.join("extract");
    let out = run(&[
        "extract",
        "--config",
        dir.join("extract.json").to_str().unwrap(),
        "--out",
        extract_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let metrics_dir = dir.join("metrics");
    let out = run(&[
        "metrics",
        "--panel",
        extract_dir.join("panel.json").to_str().unwrap(),
        "--market",
        synth_dir.join("market.json").to_str().unwrap(),
        "--horizon",
        "5",
        "--out",
        metrics_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(metrics_dir.join("ic_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["horizon_days"], 5);
    assert!(report["signal"]["ic_report"]["ic_ir"].is_number());
    assert!(report["per_feature"]["sentiment"]["t_stat"].is_number());
    assert!(metrics_dir.join("decay.csv").exists());
    assert!(metrics_dir.join("manifest.json").exists());
}

#[test]
fn optimize_no_pass_exits_3_and_prints_ledger_path() {
    let (dir, synth_dir, store_dir) = tiny_world("no_pass");
    // Impossible thresholds: nothing can pass the gates.
    write(
        &dir.join("optimize.json"),
        &format!(
            r#"{{
  "store_dir": {store:?}, "market_path": {market:?},
  "baseline_template": "../../prompts/v0-baseline.txt",
  "mutations_dir": null, "proposer_endpoint": null, "proposer_api_key_env": null,
  "optimization_window": {{ "start": "2024-01-16", "end": "2024-03-28" }},
  "oos_window": {{ "start": "2024-04-01", "end": "2024-04-30" }},
  "universe": null,
  "extractor": {{ "oracle": {{ "noise_sigma": 0.0, "seed": 5 }} }},
  "thresholds": {{
    "signal_coverage_min": 0.25, "ic_ir_min": 100.0,
    "quintile_spread_min": 0.0, "hit_rate_min": 0.52
  }},
  "max_rounds": 1
}}"#,
            store = store_dir,
            market = synth_dir.join("market.json"),
        ),
    );
    let opt_dir = dir.join("opt");
    let out = run(&[
        "optimize",
        "--config",
        dir.join("optimize.json").to_str().unwrap(),
        "--out",
        opt_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ledger.jsonl"), "{stderr}");
    assert!(opt_dir.join("ledger.jsonl").exists());
}
