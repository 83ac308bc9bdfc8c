//! Acceptance criteria, one PASS/FAIL line each. Runs with its own `main`
//! so the lines show up without `--nocapture`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

use trendlab::evaluation::class_report;
use trendlab::features::{augment_fractions, cp_features, MIN_TREND_LEN};
use trendlab::gbdt::Node;
use trendlab::labels::{count_contradictions, extract_windows, new_trigger, split_by_date, trigger_correction};
use trendlab::pipeline::{
    aggregate, fraction_accuracy, run_pipeline, trend_profit, OracleCp, OracleTof, Position, StockStats,
    CP_LAG_DAYS, MIN_SERIES_LEN, YEAR_DAYS,
};
use trendlab::synth::{generate_universe, regime_ledger, ExpertProfile, SynthConfig, SynthStock};
use trendlab::{roc_auc, ExpertWindow, FeatureMatrix, GbdtModel, GbdtParams, PipelineConfig, QuoteSeries};

type Outcome = Result<String, String>;
type CpRowMap = BTreeMap<(usize, usize, bool), Vec<f64>>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// 1 ---------------------------------------------------------------------

fn random_position(rng: &mut ChaCha8Rng, stock: &str) -> Position {
    let entry_idx = rng.random_range(0..500);
    let exit_idx = entry_idx + rng.random_range(0..200);
    let entry_close = rng.random_range(1.0..1000.0);
    let exit_close = entry_close * rng.random_range(0.2..3.0);
    let direction = if rng.random_bool(0.5) { 1 } else { -1 };
    let day = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    Position {
        stockname: stock.to_string(),
        direction,
        entry_idx,
        exit_idx,
        entry_date: day,
        exit_date: day,
        entry_close,
        exit_close,
        profit: trend_profit(entry_close, exit_close, direction),
    }
}

fn criterion_1() -> Outcome {
    let tol = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n_stocks = rng.random_range(1..6);
        let mut stats = Vec::new();
        // independent totals: (profit, days, times) for long and short sides
        let mut lng = (0.0, 0usize, 0usize);
        let mut sht = (0.0, 0usize, 0usize);
        let mut datapoints = 0;
        for s in 0..n_stocks {
            let name = format!("S{s}");
            let positions: Vec<Position> = (0..rng.random_range(0..8)).map(|_| random_position(&mut rng, &name)).collect();
            for p in &positions {
                let expected = p.direction as f64 * (p.exit_close / p.entry_close - 1.0);
                worst = worst.max((p.profit - expected).abs());
                if !close(p.profit, expected, tol) {
                    return Err(format!("case {case}: trend_profit {} vs {expected}", p.profit));
                }
                let side = if p.direction > 0 { &mut lng } else { &mut sht };
                side.0 += expected;
                side.1 += p.exit_idx - p.entry_idx + 1;
                side.2 += 1;
            }
            let dp = rng.random_range(200..3000);
            datapoints += dp;
            stats.push(StockStats::from_positions(&name, &positions, dp));
        }
        let r = aggregate(&stats, datapoints);
        let profit = lng.0 + sht.0;
        let days = lng.1 + sht.1;
        let ok_counts = r.days_in_lng == lng.1
            && r.days_in_sht == sht.1
            && r.times_in_lng == lng.2
            && r.times_in_sht == sht.2
            && r.days_in == days
            && r.times_in == lng.2 + sht.2
            && r.num_stocks == n_stocks;
        if !ok_counts {
            return Err(format!("case {case}: day or trade counts differ"));
        }
        let mut pairs = vec![
            (r.profit_lng, lng.0),
            (r.profit_sht, sht.0),
            (r.profit, profit),
            (r.profit, r.profit_lng + r.profit_sht),
            (r.year_profit_avg, profit / datapoints as f64 * 250.0),
        ];
        if days == 0 {
            if !r.no_positions || r.day_profit != 0.0 || r.year_profit != 0.0 {
                return Err(format!("case {case}: empty case not flagged"));
            }
        } else {
            pairs.push((r.day_profit, profit / days as f64));
            pairs.push((r.year_profit, profit / days as f64 * 250.0));
            pairs.push((r.day_profit * r.days_in as f64, r.profit));
            pairs.push((r.year_profit, r.day_profit * YEAR_DAYS));
        }
        for (got, want) in pairs {
            worst = worst.max((got - want).abs());
            if !close(got, want, tol) {
                return Err(format!("case {case}: {got} vs {want}"));
            }
        }
    }
    Ok(format!("1000 cases, max abs error {worst:.1e}"))
}

// 2 ---------------------------------------------------------------------

struct RootSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Enumerates every feature and midpoint threshold at the first round
/// (all margins 0, so p = 0.5).
fn brute_force_root(rows: &[Vec<f64>], y: &[bool], p: &GbdtParams) -> Option<RootSplit> {
    let g: Vec<f64> = y.iter().map(|&t| if t { -0.5 * p.scale_pos_weight } else { 0.5 }).collect();
    let h: Vec<f64> = y.iter().map(|&t| if t { 0.25 * p.scale_pos_weight } else { 0.25 }).collect();
    let score = |g: f64, h: f64| g * g / (h + p.reg_lambda);
    let mut best: Option<RootSplit> = None;
    for f in 0..rows[0].len() {
        let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let mut thr = (w[0] + w[1]) / 2.0;
            if thr <= w[0] {
                thr = w[1];
            }
            let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..rows.len() {
                if rows[i][f] < thr {
                    gl += g[i];
                    hl += h[i];
                } else {
                    gr += g[i];
                    hr += h[i];
                }
            }
            if hl < p.min_child_weight || hr < p.min_child_weight {
                continue;
            }
            let gain = 0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - p.gamma;
            if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(RootSplit {
                    feature: f,
                    threshold: thr,
                    gain,
                });
            }
        }
    }
    best
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut with_split, mut datasets) = (0, 0);
    let mut worst = 0.0f64;
    while with_split < 60 {
        datasets += 1;
        let n = rng.random_range(2..=200);
        let d = rng.random_range(1..=5);
        let levels = [4.0, 10.0, 100.0, 1e6][rng.random_range(0..4)];
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| (rng.random_range(-3.0..3.0f64) * levels).round() / levels).collect())
            .collect();
        let pos_rate = rng.random_range(0.05..0.6);
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(pos_rate)).collect();
        let params = GbdtParams {
            n_estimators: 1,
            max_depth: 1 + rng.random_range(0..3),
            learning_rate: 0.3,
            reg_lambda: [0.0, 0.5, 1.0, 3.0][rng.random_range(0..4)],
            scale_pos_weight: [1.0, 2.0, 3.0, 5.0][rng.random_range(0..4)],
            min_child_weight: [0.0, 0.5, 1.0, 2.0][rng.random_range(0..4)],
            gamma: [0.0, 0.0, 0.25][rng.random_range(0..3)],
            threads: 1,
            ..GbdtParams::default()
        };
        let x = FeatureMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
        let model = GbdtModel::fit(&x, &y, &params).map_err(|e| e.to_string())?;
        let want = brute_force_root(&rows, &y, &params);
        match (&model.trees[0], want) {
            (Node::Leaf { .. }, None) => {}
            (
                Node::Split {
                    feature,
                    threshold,
                    gain,
                    ..
                },
                Some(b),
            ) => {
                if *feature != b.feature || *threshold != b.threshold {
                    return Err(format!(
                        "dataset {datasets}: split ({feature}, {threshold}) vs oracle ({}, {})",
                        b.feature, b.threshold
                    ));
                }
                worst = worst.max((gain - b.gain).abs());
                if !close(*gain, b.gain, 1e-9) {
                    return Err(format!("dataset {datasets}: gain {gain} vs {}", b.gain));
                }
                with_split += 1;
            }
            (got, want) => {
                return Err(format!(
                    "dataset {datasets}: root {} but oracle {}",
                    if matches!(got, Node::Leaf { .. }) { "leaf" } else { "split" },
                    if want.is_some() { "splits" } else { "does not split" }
                ))
            }
        }
    }
    Ok(format!(
        "{datasets} datasets ({with_split} with a root split) match, max gain error {worst:.1e}"
    ))
}

// 3 ---------------------------------------------------------------------

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut count = 0;
    for n in 2..=200usize {
        for rep in 0..5 {
            let grid = [2, 5, 20, 1_000_000][rep % 4];
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..grid) as f64 / grid as f64).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            labels[0] = true;
            labels[1] = false;
            let got = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
            let want = pairwise_auc(&scores, &labels);
            worst = worst.max((got - want).abs());
            if !close(got, want, 1e-12) {
                return Err(format!("n = {n}: {got} vs {want}"));
            }
            count += 1;
        }
    }
    Ok(format!("{count} datasets (n = 2..200, with ties), max error {worst:.1e}"))
}

// 4 ---------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let labels: Vec<bool> = (0..1001).map(|i| i == 500).collect();
    let majority = vec![false; labels.len()];
    let f_major = class_report(&majority, &labels, None).map_err(|e| e.to_string())?.f1_macro;
    let f_perfect = class_report(&labels, &labels, None).map_err(|e| e.to_string())?.f1_macro;
    check(
        (0.49..=0.50).contains(&f_major) && f_perfect == 1.0,
        format!("all-majority f1_macro {f_major:.4}, perfect {f_perfect}"),
    )
}

// 5 ---------------------------------------------------------------------

fn imbalanced(seed: u64, negatives: usize, positives: usize) -> (FeatureMatrix, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..negatives + positives {
        let pos = i >= negatives;
        let shift = if pos { 1.2 } else { 0.0 };
        let row: Vec<f64> = (0..6).map(|j| noise.sample(&mut rng) + if j < 3 { shift } else { 0.0 }).collect();
        rows.push(row);
        y.push(pos);
    }
    (FeatureMatrix::from_rows(&rows).unwrap(), y)
}

fn criterion_5() -> Outcome {
    let (x, y) = imbalanced(50, 10_000, 100);
    let (xt, yt) = imbalanced(51, 10_000, 100);
    let recall = |spw: f64| -> Result<f64, String> {
        let params = GbdtParams {
            scale_pos_weight: spw,
            seed: 5,
            ..GbdtParams::default()
        };
        let model = GbdtModel::fit(&x, &y, &params).map_err(|e| e.to_string())?;
        let pred = model.predict(&xt, 0.5).map_err(|e| e.to_string())?;
        Ok(class_report(&pred, &yt, None).map_err(|e| e.to_string())?.positive.recall)
    };
    let (plain, weighted) = (recall(1.0)?, recall(100.0)?);
    check(
        weighted > plain,
        format!("minority recall {:.1}% with balance 100 vs {:.1}% unweighted", weighted * 100.0, plain * 100.0),
    )
}

// 6 ---------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let stocks = generate_universe(&SynthConfig::clean(), 60, &[], 6).map_err(|e| e.to_string())?;
    let windows: usize = stocks.iter().map(|s| s.synth.windows.len()).sum();
    let mut rows = Vec::new();
    for s in &stocks {
        for w in s.synth.windows.iter().filter(|w| w.len() >= MIN_TREND_LEN) {
            rows.extend(augment_fractions(w, &s.synth.series, true).map_err(|e| e.to_string())?);
        }
    }
    let mut dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
    dates.sort_unstable();
    dates.dedup();
    let split = split_by_date(rows, dates[dates.len() * 7 / 10]).map_err(|e| e.to_string())?;
    let matrix = |rows: &[trendlab::TofRow]| {
        let feats: Vec<[f64; 5]> = rows.iter().map(|r| r.features.to_array()).collect();
        (FeatureMatrix::from_rows(&feats).unwrap(), rows.iter().map(|r| r.target).collect::<Vec<_>>())
    };
    let (x, y) = matrix(&split.train);
    let (xt, _) = matrix(&split.test);
    let params = GbdtParams {
        seed: 6,
        ..trendlab::cli::tof_defaults()
    };
    let model = GbdtModel::fit(&x, &y, &params).map_err(|e| e.to_string())?;
    let proba = model.predict_proba(&xt).map_err(|e| e.to_string())?;
    let acc = fraction_accuracy(&split.test, &proba, 0.5);
    let first = acc.first().ok_or("no test rows")?;
    let last = acc.last().unwrap();
    let inversions = acc.windows(2).filter(|w| w[1].accuracy < w[0].accuracy).count();
    let curve: Vec<String> = acc.iter().map(|a| format!("{:.1}", a.accuracy * 100.0)).collect();
    check(
        windows >= 500
            && first.fraction_pct == 5
            && last.fraction_pct == 100
            && last.accuracy - first.accuracy >= 0.10
            && inversions <= 2,
        format!("{windows} windows, accuracy by fraction [{}]%, {inversions} inversions", curve.join(", ")),
    )
}

// 7 ---------------------------------------------------------------------

fn cp_rows(
    stocks: &[SynthStock],
    per_stock: &[Vec<Vec<ExpertWindow>>],
) -> Result<CpRowMap, String> {
    let mut rows = BTreeMap::new();
    for (k, (s, experts)) in stocks.iter().zip(per_stock).enumerate() {
        for ws in experts {
            for (row, target) in new_trigger(ws).rows() {
                if let Some(f) = cp_features(&s.synth.series, row, true).map_err(|e| e.to_string())? {
                    rows.entry((k, row, target)).or_insert_with(|| f.to_vec());
                }
            }
        }
    }
    Ok(rows)
}

fn criterion_7() -> Outcome {
    let profile = |name: &str| ExpertProfile {
        jitter_days: 3,
        ..ExpertProfile::identity(name)
    };
    let stocks =
        generate_universe(&SynthConfig::default(), 20, &[profile("A"), profile("B")], 7).map_err(|e| e.to_string())?;
    let raw: Vec<Vec<Vec<ExpertWindow>>> = stocks
        .iter()
        .map(|s| {
            s.labels
                .iter()
                .map(|l| extract_windows(l, &s.synth.series).map_err(|e| e.to_string()))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let corrected: Vec<Vec<Vec<ExpertWindow>>> = stocks
        .iter()
        .zip(&raw)
        .map(|(s, experts)| experts.iter().map(|ws| trigger_correction(ws, &s.synth.series)).collect())
        .collect();
    let count = |rows: &CpRowMap| {
        count_contradictions(rows.iter().map(|(k, f)| (f.as_slice(), k.2)))
    };
    let before = count(&cp_rows(&stocks, &raw)?);
    let after = count(&cp_rows(&stocks, &corrected)?);
    let reduction = if before.contradicting_rows == 0 {
        0.0
    } else {
        100.0 * (1.0 - after.contradicting_rows as f64 / before.contradicting_rows as f64)
    };
    check(
        after.contradicting_rows < before.contradicting_rows,
        format!(
            "contradicting rows {} -> {} ({reduction:.1}% fewer); positives affected {:.1}% -> {:.1}%",
            before.contradicting_rows, after.contradicting_rows, before.pct_of_positives, after.pct_of_positives
        ),
    )
}

// 8 ---------------------------------------------------------------------

fn criterion_8() -> Outcome {
    let cfg = SynthConfig {
        days: 1200,
        ..SynthConfig::default()
    };
    let stocks = generate_universe(&cfg, 12, &[], 8).map_err(|e| e.to_string())?;
    let pcfg = PipelineConfig::default();
    let mut worst = 0.0f64;
    let mut trades = 0;
    for s in &stocks {
        let ws = [s.synth.windows.as_slice()];
        let run = run_pipeline(&s.synth.series, &OracleCp::new(ws), &OracleTof::new(ws), &pcfg)
            .map_err(|e| e.to_string())?;
        let ledger = regime_ledger(&s.synth.series, &s.synth.windows, pcfg.log_mode);
        let want: f64 = ledger.iter().map(|e| e.profit).sum();
        worst = worst.max((run.stats.profit - want).abs());
        trades += ledger.len();
        if !close(run.stats.profit, want, 1e-9) || run.positions.len() != ledger.len() {
            return Err(format!(
                "{}: pipeline {} over {} trades vs ledger {want} over {}",
                s.synth.series.stockname,
                run.stats.profit,
                run.positions.len(),
                ledger.len()
            ));
        }
    }

    // replay truncation with trained models
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut tx = Vec::new();
    let mut ty = Vec::new();
    for s in &stocks[1..] {
        let series = &s.synth.series;
        for (row, target) in new_trigger(&s.synth.windows).rows() {
            if let Some(f) = cp_features(series, row, true).map_err(|e| e.to_string())? {
                x.push(f.to_vec());
                y.push(target);
            }
        }
        for w in s.synth.windows.iter().filter(|w| w.len() >= MIN_TREND_LEN) {
            for r in augment_fractions(w, series, true).map_err(|e| e.to_string())? {
                tx.push(r.features.to_array().to_vec());
                ty.push(r.target);
            }
        }
    }
    let positives = y.iter().filter(|&&t| t).count().max(1);
    let cp = GbdtModel::fit(
        &FeatureMatrix::from_rows(&x).unwrap(),
        &y,
        &GbdtParams {
            n_estimators: 20,
            scale_pos_weight: (y.len() - positives) as f64 / positives as f64,
            ..GbdtParams::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let tof = GbdtModel::fit(
        &FeatureMatrix::from_rows(&tx).unwrap(),
        &ty,
        &GbdtParams {
            n_estimators: 20,
            ..GbdtParams::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let series: &QuoteSeries = &stocks[0].synth.series;
    let full = run_pipeline(series, &cp, &tof, &pcfg).map_err(|e| e.to_string())?;
    let fired = full.trace.iter().filter(|r| r.cp_signal == Some(true)).count();
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    for _ in 0..20 {
        let d = rng.random_range(MIN_SERIES_LEN..=series.len());
        let part = run_pipeline(&series.truncated(d), &cp, &tof, &pcfg).map_err(|e| e.to_string())?;
        let keep = d - CP_LAG_DAYS;
        if full.trace[..keep] != part.trace[..keep] {
            return Err(format!("trace differs before day {keep} when cut at {d}"));
        }
    }
    check(
        fired > 0 && !full.positions.is_empty(),
        format!(
            "{} series, {trades} oracle trades, max profit error {worst:.1e}; 20 truncations agree ({fired} cp signals, {} trades)",
            stocks.len(),
            full.positions.len()
        ),
    )
}

// 9 and 10 --------------------------------------------------------------

fn trendlab(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_trendlab"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("trendlab {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// `synth → prepare → train → backtest` under `root`.
fn full_run(root: &Path, config: &Path, stocks: usize, threads: &str, extra_synth: &[&str]) -> Result<(), String> {
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    let cfg = config.to_string_lossy().into_owned();
    let (data, prep, models, bt) = (p("data"), p("prep"), p("models"), p("bt"));
    let stocks = stocks.to_string();
    let common = ["--threads", threads, "--config", &cfg, "--seed", "7"];
    let mut synth = vec!["synth", "--out", &data, "--stocks", &stocks];
    synth.extend_from_slice(extra_synth);
    synth.extend_from_slice(&common);
    trendlab(&synth)?;
    let mut prepare = vec!["prepare", "--data", &data, "--out", &prep, "--experts", "A"];
    prepare.extend_from_slice(&common);
    trendlab(&prepare)?;
    let mut train = vec!["train", "--data", &prep, "--out", &models];
    train.extend_from_slice(&common);
    trendlab(&train)?;
    let mut backtest = vec!["backtest", "--data", &data, "--prepared", &prep, "--models", &models, "--out", &bt];
    backtest.extend_from_slice(&common);
    trendlab(&backtest)
}

fn tree_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("small.cfg");
    std::fs::write(
        &config,
        "[synth]\ndays = 900\n[cp]\nn_estimators = 30\nmax_depth = 4\n[tof]\nn_estimators = 30\n",
    )
    .map_err(|e| e.to_string())?;
    let runs = [("a", "0"), ("b", "0"), ("c", "1")];
    let mut trees = Vec::new();
    for (name, threads) in runs {
        let root = tmp.path().join(name);
        full_run(&root, &config, 4, threads, &[])?;
        trees.push(tree_files(&root));
    }
    let files = trees[0].len();
    for (i, t) in trees.iter().enumerate().skip(1) {
        if t.keys().ne(trees[0].keys()) {
            return Err(format!("run {i} wrote a different file set"));
        }
        for (path, bytes) in t {
            if trees[0][path] != *bytes {
                return Err(format!("run {i} differs in {}", path.display()));
            }
        }
    }
    Ok(format!("{files} files byte-identical across 2 runs with all threads and 1 run with 1 thread"))
}

fn year_profit(v: &Value) -> Result<f64, String> {
    v["YearProfit"].as_f64().ok_or_else(|| "missing YearProfit".to_string())
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("clean.cfg");
    std::fs::write(
        &config,
        "[synth]\nclean = true\njitter_days = 1\ndisagree_prob = 0.0\nsplit_merge_prob = 0.0\n\
         [cp]\nn_estimators = 200\nmax_depth = 4\n",
    )
    .map_err(|e| e.to_string())?;
    full_run(tmp.path(), &config, 10, "0", &[])?;
    let bt = tmp.path().join("bt");
    let read = |name: &str| -> Result<Value, String> {
        let text = std::fs::read_to_string(bt.join(name)).map_err(|e| format!("{name}: {e}"))?;
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    let model = year_profit(&read("backtest_0.5.json")?["aggregate"])?;
    let truth = year_profit(&read("expert_baseline.json")?["truth"])?;
    let never = aggregate(&[], 0).year_profit;
    check(
        model > 0.0 && model > never && truth > model,
        format!(
            "YearProfit: truth {:.1}% > model {:.1}% > never-trade {:.1}%",
            truth * 100.0,
            model * 100.0,
            never * 100.0
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("profit arithmetic", criterion_1),
        ("gbdt root split oracle", criterion_2),
        ("auc oracle", criterion_3),
        ("f1_macro extremes", criterion_4),
        ("imbalance handling", criterion_5),
        ("trend-or-flat accuracy by fraction", criterion_6),
        ("trigger correction", criterion_7),
        ("pipeline oracle and no look-ahead", criterion_8),
        ("determinism", criterion_9),
        ("end-to-end ordering", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
