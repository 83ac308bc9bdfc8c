use std::fs::File;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use trendlab::features::{read_cp_rows, read_tof_rows};
use trendlab::labels::{count_contradictions, Balance};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trendlab")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_reader(File::open(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["synth"]).status.code(), Some(2), "missing --out");
    assert_eq!(run(&["synth", "--out", "x", "--bogus"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(run(&["synth", "--out", s(&out), "--stocks", "0"]).status.code(), Some(2));
    assert_eq!(
        run(&["synth", "--out", s(&out), "--config", "/nonexistent.cfg"]).status.code(),
        Some(1)
    );
    assert_eq!(
        run(&["prepare", "--out", s(&out), "--data", "/nonexistent/data"]).status.code(),
        Some(1)
    );
}

#[test]
fn every_subcommand_runs_and_prepare_figures_recompute() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let cfg = p("run.cfg");
    std::fs::write(
        &cfg,
        "# small run\nseed = 11\n[synth]\ndays = 700\n[cp]\nn_estimators = 15\n[tof]\nn_estimators = 15\n",
    )
    .unwrap();
    let cfg = s(&cfg);

    ok(&["synth", "--config", cfg, "--out", s(&p("data")), "--stocks", "3", "--experts", "A,B"]);
    for f in ["quotes/SYN000.csv", "labels/SYN002_B.csv", "truth.json", "synth_config.json"] {
        assert!(p("data").join(f).exists(), "{f}");
    }

    let stdout = ok(&["prepare", "--config", cfg, "--data", s(&p("data")), "--out", s(&p("prep")), "--correction"]);
    assert!(stdout.contains("split date"));
    let report = json(&p("prep").join("prep_report.json"));
    let read = |name: &str| File::open(p("prep").join(name)).unwrap();
    let mut cp = read_cp_rows(read("cp_train.csv")).unwrap();
    let cp_train = Balance::of(&cp);
    cp.extend(read_cp_rows(read("cp_test.csv")).unwrap());
    let mut tof = read_tof_rows(read("tof_train.csv")).unwrap();
    tof.extend(read_tof_rows(read("tof_test.csv")).unwrap());

    assert_eq!(report["cp"]["rows"], cp.len());
    assert_eq!(report["cp"]["balance"], Balance::of(&cp).to_string());
    assert_eq!(report["cp"]["train_balance"], cp_train.to_string());
    let contra = count_contradictions(cp.iter().map(|r| (r.features.as_slice(), r.new_trigger)));
    assert_eq!(report["cp"]["contradiction_stats"], serde_json::to_value(contra).unwrap());
    let tof_features: Vec<[f64; 5]> = tof.iter().map(|r| r.features.to_array()).collect();
    let contra = count_contradictions(tof_features.iter().zip(&tof).map(|(f, r)| (f.as_slice(), r.target)));
    assert_eq!(report["tof"]["contradiction_stats"], serde_json::to_value(contra).unwrap());
    assert_eq!(report["tof"]["balance"], Balance::of(&tof).to_string());

    ok(&["train", "--config", cfg, "--data", s(&p("prep")), "--out", s(&p("models"))]);
    assert!(p("models").join("cp_model.json").exists());
    assert!(p("models").join("tof_model.json").exists());

    let grid = p("grid.txt");
    std::fs::write(&grid, "max_depth = 2, 3\nn_estimators = 5\n").unwrap();
    ok(&[
        "gridsearch", "--config", cfg, "--data", s(&p("prep")), "--out", s(&p("search")), "--grid", s(&grid),
        "--which", "tof", "--folds", "3",
    ]);
    let csv = std::fs::read_to_string(p("search").join("search_tof.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("max_depth,n_estimators,mean_score,fit_seconds"));
    assert!(p("search").join("search_tof_best.json").exists());

    ok(&[
        "backtest", "--config", cfg, "--data", s(&p("data")), "--prepared", s(&p("prep")), "--models",
        s(&p("models")), "--out", s(&p("bt")), "--cp-threshold", "0.3,0.9",
    ]);
    for f in ["backtest_0.3.json", "backtest_0.9.json", "expert_baseline.json", "fraction_accuracy.csv"] {
        assert!(p("bt").join(f).exists(), "{f}");
    }
    let bt = json(&p("bt").join("backtest_0.3.json"));
    let agg = &bt["aggregate"];
    assert_eq!(agg["numStocks"], 3);
    let profit = agg["Profit"].as_f64().unwrap();
    let parts = agg["Profit_lng"].as_f64().unwrap() + agg["Profit_sht"].as_f64().unwrap();
    assert_eq!(profit, parts);
    assert!(p("bt").join("traces/0.3/SYN000.csv").exists());

    ok(&["baseline", "--config", cfg, "--data", s(&p("data")), "--out", s(&p("base")), "--experts", "A"]);
    let base = json(&p("base").join("expert_baseline.json"));
    assert!(base["A"]["YearProfit"].is_number());
}

#[test]
fn oracle_backtest_runs_from_truth() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["synth", "--seed", "3", "--out", s(&p("data")), "--stocks", "3", "--days", "2000"]);
    ok(&["prepare", "--seed", "3", "--data", s(&p("data")), "--out", s(&p("prep"))]);
    ok(&["backtest", "--seed", "3", "--data", s(&p("data")), "--prepared", s(&p("prep")), "--out", s(&p("bt")), "--oracle"]);
    let bt = json(&p("bt").join("backtest_0.5.json"));
    assert_eq!(bt["oracle"], true);
    assert!(bt["aggregate"]["Times_in"].as_u64().unwrap() > 0);
}
