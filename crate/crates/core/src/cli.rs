//! Command-line interface: `synth`, `prepare`, `train`, `gridsearch`,
//! `backtest` and `baseline`.
//!
//! Every command accepts `--config PATH` (a flat `key = value` file with
//! `[synth]`, `[prepare]`, `[cp]`, `[tof]` and `[pipeline]` sections),
//! `--seed N` and `--out DIR`; flags override file values. Exit codes: 0 on
//! success, 2 on usage errors, 1 on runtime errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::evaluation::{class_report, grid_search, ParamGrid, Scoring, SearchMode};
use crate::features::{
    augment_fractions, cp_features, read_cp_rows, read_tof_rows, write_cp_rows, write_tof_rows, CpRow, TofRow,
    MIN_TREND_LEN,
};
use crate::gbdt::{FeatureMatrix, GbdtModel, GbdtParams};
use crate::labels::{
    count_contradictions, extract_windows, new_trigger, split_by_date, trigger_correction, vote_windows, Balance,
    ExpertWindow, VOTED_EXPERT,
};
use crate::market_data::{
    group_by_stock_expert, load_label_file, load_quotes, merge_label_files, parse_date, write_labels, write_quotes,
    DefectPolicy, ExpertLabelRow, QuoteSchema, QuoteSeries, DATE_FORMAT,
};
use crate::pipeline::{
    aggregate_stocks, expert_stats, fraction_accuracy, run_many, write_trace, CpScorer, OracleCp, OracleTof,
    PipelineConfig, StockStats, TofScorer, MIN_SERIES_LEN,
};
use crate::synth::{generate_universe, truth_map, ExpertProfile, SynthConfig};

/// Name of the virtual expert obtained by voting, in baseline reports.
pub const AVERAGE_EXPERT: &str = "Average";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Debug, Parser)]
#[command(name = "trendlab", version, about = "Trend detection and backtesting on daily quotes")]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file with `key = value` lines in sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic quotes, expert labels and ground truth.
    Synth(SynthArgs),
    /// Build changepoint and trend-or-flat datasets from labelled data.
    Prepare(PrepareArgs),
    /// Train models on prepared datasets.
    Train(TrainArgs),
    /// Cross-validated hyper-parameter search.
    Gridsearch(GridArgs),
    /// Run the two-stage pipeline over the test span.
    Backtest(BacktestArgs),
    /// Profit of trading the expert labels themselves.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub stocks: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    /// Comma-separated expert names.
    #[arg(long)]
    pub experts: Option<String>,
    /// Low-noise market.
    #[arg(long)]
    pub clean: bool,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory with `quotes/` and `labels/`.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated experts to keep (default: all).
    #[arg(long)]
    pub experts: Option<String>,
    /// Vote the experts into one labelling.
    #[arg(long)]
    pub average: bool,
    /// Snap trend starts to local price extrema.
    #[arg(long)]
    pub correction: bool,
    /// Use raw instead of logarithmic features.
    #[arg(long)]
    pub no_log: bool,
    /// First test date (default: the 70% date quantile).
    #[arg(long)]
    pub split_date: Option<String>,
    /// Skip label files that conflict with other data instead of failing.
    #[arg(long)]
    pub skip_defects: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Cp,
    Tof,
    Both,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Prepared dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Which::Both)]
    pub which: Which,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: Common,
    /// Prepared dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Grid file: `name = v1, v2, ...` per line.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, value_enum)]
    pub which: Which,
    /// `full` or `random:N`.
    #[arg(long, default_value = "full")]
    pub mode: String,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value = "f1_macro")]
    pub scoring: String,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub common: Common,
    /// Raw data directory with `quotes/` and `labels/`.
    #[arg(long)]
    pub data: PathBuf,
    /// Prepared dataset directory (split date, feature mode, test rows).
    #[arg(long)]
    pub prepared: PathBuf,
    /// Directory with `cp_model.json` and `tof_model.json`.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Comma-separated changepoint thresholds, one report each.
    #[arg(long)]
    pub cp_threshold: Option<String>,
    /// Use the ground truth in `truth.json` instead of trained models.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub experts: Option<String>,
    /// Only use days from this date on.
    #[arg(long)]
    pub split_date: Option<String>,
}

/// Parsed config file: section → key → raw value. Keys before any section
/// header live in section `""`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

const SYNTH_KEYS: &[&str] = &[
    "stocks",
    "days",
    "clean",
    "start_date",
    "initial_price",
    "trend_len_min",
    "trend_len_max",
    "flat_len_min",
    "flat_len_max",
    "flat_prob",
    "drift_min",
    "drift_max",
    "volatility",
    "flat_volatility",
    "flat_reversion",
    "substeps",
    "volume_level",
    "volume_trend",
    "volume_noise",
    "experts",
    "jitter_days",
    "disagree_prob",
    "split_merge_prob",
];
const PREPARE_KEYS: &[&str] = &["experts", "average", "correction", "log_mode", "split_date", "skip_defects"];
const PIPELINE_KEYS: &[&str] = &["cp_threshold", "tof_threshold", "min_window_days", "hold_until_changepoint"];

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = ConfigFile::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(format!("line {}: expected `key = value`", i + 1));
            };
            let v = v.split(" #").next().unwrap_or("").trim();
            cfg.sections
                .entry(section.clone())
                .or_default()
                .insert(k.trim().to_string(), v.to_string());
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), String> {
        for (section, keys) in &self.sections {
            for key in keys.keys() {
                let ok = match section.as_str() {
                    "" => matches!(key.as_str(), "seed" | "threads"),
                    "synth" => SYNTH_KEYS.contains(&key.as_str()) || key.starts_with("expert."),
                    "prepare" => PREPARE_KEYS.contains(&key.as_str()),
                    "cp" | "tof" => crate::gbdt::PARAM_NAMES.contains(&key.as_str()),
                    "pipeline" => PIPELINE_KEYS.contains(&key.as_str()),
                    _ => return Err(format!("unknown section [{section}]")),
                };
                if !ok {
                    return Err(format!("unknown key `{key}` in section [{section}]"));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    fn num<T: std::str::FromStr>(&self, section: &str, key: &str) -> CliResult<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("[{section}] {key}: bad value `{v}`"))),
        }
    }

    fn flag(&self, section: &str, key: &str) -> CliResult<Option<bool>> {
        match self.get(section, key) {
            None => Ok(None),
            Some("true" | "yes" | "1" | "on") => Ok(Some(true)),
            Some("false" | "no" | "0" | "off") => Ok(Some(false)),
            Some(v) => usage(format!("[{section}] {key}: expected a boolean, got `{v}`")),
        }
    }
}

fn load_config(path: Option<&Path>) -> CliResult<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(CliError::Runtime)?;
    ConfigFile::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn list(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

fn date_arg(s: &str) -> CliResult<NaiveDate> {
    parse_date(s).map_or_else(|| usage(format!("bad date `{s}` (expected YYYY-MM-DD)")), Ok)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create_file(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn csv_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

fn seed_of(common: &Common, cfg: &ConfigFile) -> CliResult<u64> {
    Ok(common.seed.or(cfg.num("", "seed")?).unwrap_or(0))
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Runtime(e.into()))?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a, cli.threads),
        Command::Gridsearch(a) => cmd_gridsearch(a, cli.threads),
        Command::Backtest(a) => cmd_backtest(a),
        Command::Baseline(a) => cmd_baseline(a),
    })
}

// ---------------------------------------------------------------- synth

fn synth_config(a: &SynthArgs, cfg: &ConfigFile) -> CliResult<(SynthConfig, usize, Vec<ExpertProfile>)> {
    let s = "synth";
    let clean = a.clean || cfg.flag(s, "clean")?.unwrap_or(false);
    let mut sc = if clean { SynthConfig::clean() } else { SynthConfig::default() };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = cfg.num(s, stringify!($field))? {
                sc.$field = v;
            }
        )*};
    }
    set!(
        days,
        initial_price,
        trend_len_min,
        trend_len_max,
        flat_len_min,
        flat_len_max,
        flat_prob,
        drift_min,
        drift_max,
        volatility,
        flat_volatility,
        flat_reversion,
        substeps,
        volume_level,
        volume_trend,
        volume_noise
    );
    if let Some(d) = cfg.get(s, "start_date") {
        sc.start_date = date_arg(d)?;
    }
    if let Some(d) = a.days {
        sc.days = d;
    }
    let stocks = a.stocks.or(cfg.num(s, "stocks")?).unwrap_or(5);
    if stocks == 0 {
        return usage("--stocks must be at least 1");
    }
    if sc.days < MIN_SERIES_LEN {
        return usage(format!("--days must be at least {MIN_SERIES_LEN}"));
    }
    sc.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let names = a
        .experts
        .clone()
        .or_else(|| cfg.get(s, "experts").map(String::from))
        .map_or_else(|| vec!["A".into(), "B".into(), "C".into()], |v| list(&v));
    if names.is_empty() {
        return usage("at least one expert is required");
    }
    let base = ExpertProfile {
        name: String::new(),
        jitter_days: cfg.num(s, "jitter_days")?.unwrap_or(3),
        disagree_prob: cfg.num(s, "disagree_prob")?.unwrap_or(0.1),
        split_merge_prob: cfg.num(s, "split_merge_prob")?.unwrap_or(0.05),
    };
    if let Some(keys) = cfg.sections.get(s) {
        for key in keys.keys() {
            if let Some(name) = key.strip_prefix("expert.") {
                if !names.iter().any(|n| n == name) {
                    return usage(format!("[synth] {key}: `{name}` is not in the expert list"));
                }
            }
        }
    }
    let mut profiles = Vec::new();
    for name in names {
        let mut p = ExpertProfile {
            name: name.clone(),
            ..base.clone()
        };
        if let Some(v) = cfg.get(s, &format!("expert.{name}")) {
            let parts = list(v);
            let bad = || CliError::Usage(format!("[synth] expert.{name}: expected `jitter, disagree, split_merge`"));
            if parts.len() != 3 {
                return Err(bad());
            }
            p.jitter_days = parts[0].parse().map_err(|_| bad())?;
            p.disagree_prob = parts[1].parse().map_err(|_| bad())?;
            p.split_merge_prob = parts[2].parse().map_err(|_| bad())?;
        }
        p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        profiles.push(p);
    }
    Ok((sc, stocks, profiles))
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let cfg = load_config(a.common.config.as_deref())?;
    let (sc, n_stocks, profiles) = synth_config(a, &cfg)?;
    let seed = seed_of(&a.common, &cfg)?;
    let stocks = generate_universe(&sc, n_stocks, &profiles, seed).map_err(|e| CliError::Usage(e.to_string()))?;

    let out = &a.common.out;
    let (qdir, ldir) = (out.join("quotes"), out.join("labels"));
    create_dir(&qdir)?;
    create_dir(&ldir)?;
    let mut label_files = 0;
    for stock in &stocks {
        let name = &stock.synth.series.stockname;
        let mut w = create_file(&qdir.join(format!("{name}.csv")))?;
        write_quotes(&mut w, &stock.synth.series).context("writing quotes")?;
        w.flush().context("writing quotes")?;
        for (p, rows) in profiles.iter().zip(&stock.labels) {
            let mut w = create_file(&ldir.join(format!("{name}_{}.csv", p.name)))?;
            write_labels(&mut w, rows).context("writing labels")?;
            w.flush().context("writing labels")?;
            label_files += 1;
        }
    }
    write_json(&out.join("truth.json"), &truth_map(&stocks))?;
    write_json(
        &out.join("synth_config.json"),
        &json!({ "seed": seed, "stocks": n_stocks, "market": sc, "experts": profiles }),
    )?;
    println!(
        "wrote {} quote files, {label_files} label files and truth.json to {}",
        stocks.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- data loading

/// Quotes and merged expert labels of a data directory.
pub struct Dataset {
    pub quotes: BTreeMap<String, QuoteSeries>,
    pub labels: Vec<ExpertLabelRow>,
    pub rejected: Vec<String>,
}

pub fn load_dataset(dir: &Path, policy: DefectPolicy) -> anyhow::Result<Dataset> {
    let schema = QuoteSchema::default();
    let mut known = Vec::new();
    let qdir = dir.join("quotes");
    if qdir.is_dir() {
        for f in csv_files(&qdir)? {
            known.push(load_quotes(&f, &schema)?);
        }
    }
    let ldir = dir.join("labels");
    if !ldir.is_dir() {
        bail!("{} has no labels/ directory", dir.display());
    }
    let files = csv_files(&ldir)?
        .iter()
        .map(|f| load_label_file(f))
        .collect::<Result<Vec<_>, _>>()?;
    let merged = merge_label_files(&files, &known, policy)?;
    for e in &merged.rejected {
        log::warn!("skipped {e}");
    }
    Ok(Dataset {
        quotes: merged.quotes,
        labels: merged.rows,
        rejected: merged.rejected.iter().map(|e| e.to_string()).collect(),
    })
}

/// Windows per stock and expert, optionally restricted to dates from `from` on.
pub fn expert_windows(
    ds: &Dataset,
    experts: Option<&[String]>,
    from: Option<NaiveDate>,
) -> anyhow::Result<BTreeMap<String, Vec<Vec<ExpertWindow>>>> {
    let mut out: BTreeMap<String, Vec<Vec<ExpertWindow>>> = BTreeMap::new();
    for ((stock, expert), rows) in group_by_stock_expert(&ds.labels) {
        if experts.is_some_and(|e| !e.contains(&expert)) {
            continue;
        }
        let Some(series) = ds.quotes.get(&stock) else {
            bail!("no quotes for stock {stock}");
        };
        let series = series.slice_dates(from, None);
        let rows: Vec<ExpertLabelRow> = rows.into_iter().filter(|r| from.is_none_or(|f| r.date >= f)).collect();
        if rows.is_empty() {
            continue;
        }
        let w = extract_windows(&rows, &series).with_context(|| format!("labels of {expert} on {stock}"))?;
        out.entry(stock).or_default().push(w);
    }
    Ok(out)
}

// ---------------------------------------------------------------- prepare

struct PrepOptions {
    experts: Option<Vec<String>>,
    average: bool,
    correction: bool,
    log_mode: bool,
    split_date: Option<NaiveDate>,
    skip_defects: bool,
}

fn prep_options(a: &PrepareArgs, cfg: &ConfigFile) -> CliResult<PrepOptions> {
    let s = "prepare";
    let experts = a.experts.clone().or_else(|| cfg.get(s, "experts").map(String::from)).map(|v| list(&v));
    if experts.as_ref().is_some_and(|e| e.is_empty()) {
        return usage("--experts is empty");
    }
    let split = a.split_date.clone().or_else(|| cfg.get(s, "split_date").map(String::from));
    Ok(PrepOptions {
        experts,
        average: a.average || cfg.flag(s, "average")?.unwrap_or(false),
        correction: a.correction || cfg.flag(s, "correction")?.unwrap_or(false),
        log_mode: !a.no_log && cfg.flag(s, "log_mode")?.unwrap_or(true),
        split_date: split.as_deref().map(date_arg).transpose()?,
        skip_defects: a.skip_defects || cfg.flag(s, "skip_defects")?.unwrap_or(false),
    })
}

/// Changepoint and trend-or-flat rows for the selected labelling.
pub fn build_rows(
    ds: &Dataset,
    windows: &BTreeMap<String, Vec<Vec<ExpertWindow>>>,
    log_mode: bool,
) -> anyhow::Result<(Vec<CpRow>, Vec<TofRow>)> {
    let mut cp = BTreeMap::new();
    let mut tof = BTreeMap::new();
    for (stock, per_expert) in windows {
        let series = &ds.quotes[stock];
        for ws in per_expert {
            for (row, target) in new_trigger(ws).rows() {
                if let Some(features) = cp_features(series, row, log_mode).with_context(|| stock.clone())? {
                    let date = series.bars[row].date;
                    cp.entry((stock.clone(), date, target)).or_insert(CpRow {
                        stockname: stock.clone(),
                        expert: ws[0].expert.clone(),
                        date,
                        features,
                        new_trigger: target,
                    });
                }
            }
            for w in ws.iter().filter(|w| w.len() >= MIN_TREND_LEN) {
                for r in augment_fractions(w, series, log_mode).with_context(|| stock.clone())? {
                    tof.entry((stock.clone(), r.window_start, r.date, r.target)).or_insert(r);
                }
            }
        }
    }
    Ok((cp.into_values().collect(), tof.into_values().collect()))
}

/// Date at the 70% quantile of the distinct row dates.
pub fn default_split_date(rows: &[CpRow]) -> Option<NaiveDate> {
    let mut dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
    dates.sort_unstable();
    dates.dedup();
    dates.get(dates.len() * 7 / 10).copied()
}

fn cmd_prepare(a: &PrepareArgs) -> CliResult<()> {
    let cfg = load_config(a.common.config.as_deref())?;
    let opt = prep_options(a, &cfg)?;
    let policy = if opt.skip_defects { DefectPolicy::Skip } else { DefectPolicy::Fail };
    let ds = load_dataset(&a.data, policy)?;
    let mut windows = expert_windows(&ds, opt.experts.as_deref(), None)?;
    if windows.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!("no labels left after the expert filter")));
    }
    for (stock, per_expert) in windows.iter_mut() {
        let series = &ds.quotes[stock];
        if opt.correction {
            for ws in per_expert.iter_mut() {
                *ws = trigger_correction(ws, series);
            }
        }
        if opt.average {
            *per_expert = vec![vote_windows(per_expert, series)];
        }
    }
    let (cp, tof) = build_rows(&ds, &windows, opt.log_mode)?;
    let Some(split) = opt.split_date.or_else(|| default_split_date(&cp)) else {
        return Err(CliError::Runtime(anyhow::anyhow!("no changepoint rows could be built")));
    };
    let cp_contra = count_contradictions(cp.iter().map(|r| (r.features.as_slice(), r.new_trigger)));
    let tof_contra = count_contradictions(tof.iter().map(|r| (r.features.to_array().to_vec(), r.target)).collect::<Vec<_>>().iter().map(|(f, t)| (f.as_slice(), *t)));
    let cp_balance = Balance::of(&cp);
    let tof_balance = Balance::of(&tof);
    let cp_split = split_by_date(cp, split).context("splitting changepoint rows")?;
    let tof_split = split_by_date(tof, split).context("splitting trend-or-flat rows")?;

    let out = &a.common.out;
    create_dir(out)?;
    let write = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> anyhow::Result<()>| -> anyhow::Result<()> {
        let mut w = create_file(&out.join(name))?;
        f(&mut w)?;
        w.flush()?;
        Ok(())
    };
    write("cp_train.csv", &|w| Ok(write_cp_rows(w, &cp_split.train)?))?;
    write("cp_test.csv", &|w| Ok(write_cp_rows(w, &cp_split.test)?))?;
    write("tof_train.csv", &|w| Ok(write_tof_rows(w, &tof_split.train)?))?;
    write("tof_test.csv", &|w| Ok(write_tof_rows(w, &tof_split.test)?))?;

    let experts: Vec<String> = match &opt.experts {
        Some(e) => e.clone(),
        None => {
            let mut all: Vec<String> = ds.labels.iter().map(|r| r.expert.clone()).collect();
            all.sort();
            all.dedup();
            all
        }
    };
    let section = |balance: Balance, train: Balance, train_rows: usize, test_rows: usize, contra: crate::labels::ContradictionStats| {
        json!({
            "rows": train_rows + test_rows,
            "train_rows": train_rows,
            "test_rows": test_rows,
            "balance": balance.to_string(),
            "train_balance": train.to_string(),
            "train_balance_ratio": train.ratio(),
            "contradictions": contra.to_string(),
            "contradiction_stats": contra,
        })
    };
    let report = json!({
        "experts": experts,
        "average": opt.average,
        "correction": opt.correction,
        "log_mode": opt.log_mode,
        "split_date": split.format(DATE_FORMAT).to_string(),
        "cp": section(cp_balance, cp_split.train_balance(), cp_split.train.len(), cp_split.test.len(), cp_contra),
        "tof": section(tof_balance, tof_split.train_balance(), tof_split.train.len(), tof_split.test.len(), tof_contra),
        "rejected_files": ds.rejected,
    });
    write_json(&out.join("prep_report.json"), &report)?;
    println!(
        "changepoint rows: {} train / {} test, balance {}, contradictions {}",
        cp_split.train.len(),
        cp_split.test.len(),
        cp_balance,
        cp_contra
    );
    println!(
        "trend-or-flat rows: {} train / {} test, balance {}, contradictions {}",
        tof_split.train.len(),
        tof_split.test.len(),
        tof_balance,
        tof_contra
    );
    println!("split date {}", split.format(DATE_FORMAT));
    Ok(())
}

// ---------------------------------------------------------------- train

/// Changepoint model defaults.
pub fn cp_defaults() -> GbdtParams {
    GbdtParams {
        n_estimators: 500,
        max_depth: 7,
        reg_lambda: 3.0,
        learning_rate: 0.1,
        ..GbdtParams::default()
    }
}

/// Trend-or-flat model defaults.
pub fn tof_defaults() -> GbdtParams {
    GbdtParams {
        n_estimators: 100,
        max_depth: 5,
        reg_lambda: 3.0,
        learning_rate: 0.2,
        ..GbdtParams::default()
    }
}

fn read_rows<T>(path: &Path, f: impl Fn(File) -> Result<Vec<T>, crate::features::FeatureError>) -> anyhow::Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    f(file).with_context(|| format!("reading {}", path.display()))
}

/// Features and targets of a prepared split file.
pub fn load_matrix(dir: &Path, which: Which, part: &str) -> anyhow::Result<(FeatureMatrix, Vec<bool>)> {
    match which {
        Which::Cp => {
            let rows = read_rows(&dir.join(format!("cp_{part}.csv")), read_cp_rows)?;
            let x = FeatureMatrix::from_rows(&rows.iter().map(|r| r.features).collect::<Vec<_>>())?;
            Ok((x, rows.iter().map(|r| r.new_trigger).collect()))
        }
        _ => {
            let rows = read_rows(&dir.join(format!("tof_{part}.csv")), read_tof_rows)?;
            let x = FeatureMatrix::from_rows(&rows.iter().map(|r| r.features.to_array()).collect::<Vec<_>>())?;
            Ok((x, rows.iter().map(|r| r.target).collect()))
        }
    }
}

/// Negatives per positive of the training targets.
fn balance_of(y: &[bool]) -> Balance {
    let positives = y.iter().filter(|t| **t).count();
    Balance {
        negatives: y.len() - positives,
        positives,
    }
}

/// Model parameters from defaults, the config section and the seed;
/// `scale_pos_weight = balance` resolves to the training balance.
fn model_params(which: Which, cfg: &ConfigFile, seed: u64, threads: usize, y: &[bool]) -> CliResult<GbdtParams> {
    let (section, mut p) = match which {
        Which::Cp => ("cp", cp_defaults()),
        _ => ("tof", tof_defaults()),
    };
    let balance = balance_of(y).ratio().unwrap_or(1.0);
    if which == Which::Cp {
        p.scale_pos_weight = balance;
    }
    if let Some(keys) = cfg.sections.get(section) {
        for (k, v) in keys {
            let value = if v == "balance" {
                balance
            } else {
                v.parse().map_err(|_| CliError::Usage(format!("[{section}] {k}: bad value `{v}`")))?
            };
            p.set(k, value).map_err(|e| CliError::Usage(e.to_string()))?;
        }
    }
    p.seed = seed;
    p.threads = threads;
    p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(p)
}

fn which_list(w: Which) -> Vec<Which> {
    match w {
        Which::Both => vec![Which::Cp, Which::Tof],
        w => vec![w],
    }
}

fn which_name(w: Which) -> &'static str {
    match w {
        Which::Cp => "cp",
        Which::Tof => "tof",
        Which::Both => "both",
    }
}

fn cmd_train(a: &TrainArgs, threads: usize) -> CliResult<()> {
    let cfg = load_config(a.common.config.as_deref())?;
    let seed = seed_of(&a.common, &cfg)?;
    let out = &a.common.out;
    create_dir(out)?;
    let mut report = serde_json::Map::new();
    for which in which_list(a.which) {
        let name = which_name(which);
        let (x, y) = load_matrix(&a.data, which, "train")?;
        let (tx, ty) = load_matrix(&a.data, which, "test")?;
        let params = model_params(which, &cfg, seed, threads, &y)?;
        let model = GbdtModel::fit(&x, &y, &params).context("training")?;
        let train_p = model.predict_proba(&x).context("scoring")?;
        let test_p = model.predict_proba(&tx).context("scoring")?;
        let pred = |p: &[f64]| p.iter().map(|&v| v >= 0.5).collect::<Vec<_>>();
        let train_r = class_report(&pred(&train_p), &y, Some(&train_p)).context("train report")?;
        let test_r = class_report(&pred(&test_p), &ty, Some(&test_p)).context("test report")?;
        let mut w = create_file(&out.join(format!("{name}_model.json")))?;
        w.write_all(model.to_json().context("serialising model")?.as_bytes())
            .and_then(|_| w.flush())
            .context("writing model")?;
        println!("{name} model (scale_pos_weight {}):", params.scale_pos_weight);
        println!("train\n{train_r}");
        println!("test\n{test_r}");
        report.insert(
            name.into(),
            json!({
                "params": params,
                "train_balance": balance_of(&y).to_string(),
                "scale_pos_weight": params.scale_pos_weight,
                "train": train_r,
                "test": test_r,
            }),
        );
    }
    write_json(&out.join(format!("train_report_{}.json", which_name(a.which))), &report)?;
    Ok(())
}

// ---------------------------------------------------------------- gridsearch

/// One grid axis; `None` stands for `balance`.
pub type GridAxis = (String, Vec<Option<f64>>);

/// Parses `name = v1, v2` lines; `balance` is kept as `None` for later resolution.
pub fn parse_grid(text: &str) -> Result<Vec<GridAxis>, String> {
    let mut axes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `name = v1, v2, ...`", i + 1))?;
        let name = k.trim().to_string();
        if !crate::gbdt::PARAM_NAMES.contains(&name.as_str()) && GbdtParams::default().get(&name).is_none() {
            return Err(format!("line {}: unknown parameter `{name}`", i + 1));
        }
        let values = list(v)
            .iter()
            .map(|s| {
                if s == "balance" {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| format!("line {}: bad value `{s}`", i + 1))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err(format!("line {}: `{name}` has no values", i + 1));
        }
        axes.push((name, values));
    }
    Ok(axes)
}

fn cmd_gridsearch(a: &GridArgs, threads: usize) -> CliResult<()> {
    let cfg = load_config(a.common.config.as_deref())?;
    let seed = seed_of(&a.common, &cfg)?;
    if a.which == Which::Both {
        return usage("--which must be cp or tof");
    }
    let mode: SearchMode = a.mode.parse().map_err(CliError::Usage)?;
    let scoring: Scoring = a.scoring.parse().map_err(|e: crate::evaluation::EvalError| CliError::Usage(e.to_string()))?;
    if a.folds < 2 {
        return usage("--folds must be at least 2");
    }
    let text = fs::read_to_string(&a.grid)
        .with_context(|| format!("reading {}", a.grid.display()))
        .map_err(CliError::Runtime)?;
    let axes = parse_grid(&text).map_err(|e| CliError::Usage(format!("{}: {e}", a.grid.display())))?;
    if axes.is_empty() {
        return usage(format!("{}: grid is empty", a.grid.display()));
    }
    let (x, y) = load_matrix(&a.data, a.which, "train")?;
    let base = model_params(a.which, &cfg, seed, threads, &y)?;
    let balance = balance_of(&y).ratio().unwrap_or(1.0);
    let grid = ParamGrid::new(
        axes.into_iter()
            .map(|(n, vs)| (n, vs.into_iter().map(|v| v.unwrap_or(balance)).collect()))
            .collect(),
    );
    let result = grid_search(&x, &y, &grid, mode, &base, a.folds, scoring, seed).context("grid search")?;
    let out = &a.common.out;
    create_dir(out)?;
    let name = which_name(a.which);
    let mut w = create_file(&out.join(format!("search_{name}.csv")))?;
    result.write_csv(&mut w).context("writing search results")?;
    w.flush().context("writing search results")?;
    let best = result.best();
    write_json(
        &out.join(format!("search_{name}_best.json")),
        &json!({
            "scoring": scoring,
            "best_score": best.mean_score,
            "best_params": best.params.iter().cloned().collect::<BTreeMap<_, _>>(),
            "evaluated": result.entries.len(),
        }),
    )?;
    println!(
        "{} combinations evaluated; best {scoring} {:.4} at {}",
        result.entries.len(),
        best.mean_score,
        best.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
    );
    Ok(())
}

// ---------------------------------------------------------------- backtest

fn pipeline_config(cfg: &ConfigFile, log_mode: bool) -> CliResult<PipelineConfig> {
    let s = "pipeline";
    let mut p = PipelineConfig {
        log_mode,
        ..PipelineConfig::default()
    };
    if let Some(v) = cfg.num(s, "cp_threshold")? {
        p.cp_threshold = v;
    }
    if let Some(v) = cfg.num(s, "tof_threshold")? {
        p.tof_threshold = v;
    }
    if let Some(v) = cfg.num(s, "min_window_days")? {
        p.min_window_days = v;
    }
    if let Some(v) = cfg.flag(s, "hold_until_changepoint")? {
        p.hold_until_changepoint = v;
    }
    p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(p)
}

fn load_model(path: &Path) -> anyhow::Result<GbdtModel> {
    let text = fs::read_to_string(path).with_context(|| format!("model file {} is missing or unreadable", path.display()))?;
    GbdtModel::from_json(&text).with_context(|| format!("parsing model {}", path.display()))
}

/// Ground-truth windows of `truth.json`, rebased onto `series` (whose first
/// day may fall inside a window).
pub fn rebase_windows(windows: &[ExpertWindow], series: &QuoteSeries) -> Vec<ExpertWindow> {
    let (Some(first), Some(last)) = (series.bars.first(), series.bars.last()) else {
        return Vec::new();
    };
    windows
        .iter()
        .filter(|w| w.end_date >= first.date && w.start_date <= last.date)
        .filter_map(|w| {
            let start_date = w.start_date.max(first.date);
            let end_date = w.end_date.min(last.date);
            Some(ExpertWindow {
                start: series.index_of(start_date)?,
                end: series.index_of(end_date)?,
                start_date,
                end_date,
                ..w.clone()
            })
        })
        .collect()
}

fn load_truth(dir: &Path) -> anyhow::Result<BTreeMap<String, Vec<ExpertWindow>>> {
    let path = dir.join("truth.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Expert baselines per expert, plus the voted "Average" expert and the
/// ground truth when available.
fn baselines(
    dir: &Path,
    ds: &Dataset,
    experts: Option<&[String]>,
    from: Option<NaiveDate>,
) -> anyhow::Result<BTreeMap<String, Value>> {
    let windows = expert_windows(ds, experts, from)?;
    let mut per_expert: BTreeMap<String, Vec<StockStats>> = BTreeMap::new();
    for (stock, lists) in &windows {
        let series = ds.quotes[stock].slice_dates(from, None);
        for ws in lists {
            per_expert.entry(ws[0].expert.clone()).or_default().push(expert_stats(&series, ws));
        }
        if lists.len() > 1 {
            let voted = vote_windows(lists, &series);
            per_expert.entry(AVERAGE_EXPERT.into()).or_default().push(expert_stats(&series, &voted));
        }
    }
    if dir.join("truth.json").is_file() {
        for (stock, ws) in load_truth(dir)? {
            if let Some(series) = ds.quotes.get(&stock) {
                let series = series.slice_dates(from, None);
                let ws = rebase_windows(&ws, &series);
                per_expert.entry("truth".into()).or_default().push(expert_stats(&series, &ws));
            }
        }
    }
    Ok(per_expert
        .into_iter()
        .map(|(name, stats)| (name.replace(VOTED_EXPERT, AVERAGE_EXPERT), json!(aggregate_stocks(&stats))))
        .collect())
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

fn cmd_backtest(a: &BacktestArgs) -> CliResult<()> {
    let cfg = load_config(a.common.config.as_deref())?;
    let prep = read_json(&a.prepared.join("prep_report.json"))?;
    let split = prep["split_date"]
        .as_str()
        .and_then(parse_date)
        .ok_or_else(|| CliError::Runtime(anyhow::anyhow!("prep_report.json lacks a split_date")))?;
    let log_mode = prep["log_mode"].as_bool().unwrap_or(true);
    let base = pipeline_config(&cfg, log_mode)?;
    let thresholds: Vec<f64> = match &a.cp_threshold {
        Some(s) => list(s)
            .iter()
            .map(|t| t.parse().map_err(|_| CliError::Usage(format!("bad threshold `{t}`"))))
            .collect::<CliResult<_>>()?,
        None => vec![base.cp_threshold],
    };
    if thresholds.is_empty() {
        return usage("--cp-threshold is empty");
    }
    for &t in &thresholds {
        PipelineConfig {
            cp_threshold: t,
            ..base.clone()
        }
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    }

    let ds = load_dataset(&a.data, DefectPolicy::Skip)?;
    let mut series = Vec::new();
    for s in ds.quotes.values() {
        let s = s.slice_dates(Some(split), None);
        if s.len() >= MIN_SERIES_LEN {
            series.push(s);
        } else {
            log::warn!("{} has only {} test bars; skipped", s.stockname, s.len());
        }
    }

    let (cp, tof): (Box<dyn CpScorer>, Box<dyn TofScorer>) = if a.oracle {
        let truth = load_truth(&a.data)?;
        let rebased: Vec<Vec<ExpertWindow>> = series
            .iter()
            .map(|s| truth.get(&s.stockname).map_or_else(Vec::new, |w| rebase_windows(w, s)))
            .collect();
        let lists = || rebased.iter().map(Vec::as_slice);
        (Box::new(OracleCp::new(lists())), Box::new(OracleTof::new(lists())))
    } else {
        let Some(dir) = &a.models else {
            return usage("--models is required unless --oracle is given");
        };
        (
            Box::new(load_model(&dir.join("cp_model.json"))?),
            Box::new(load_model(&dir.join("tof_model.json"))?),
        )
    };

    let out = &a.common.out;
    create_dir(out)?;
    println!("{:>10} {:>9} {:>8} {:>9} {:>11} {:>14}", "threshold", "Profit", "Days_in", "Times_in", "YearProfit", "YearProfit_avg");
    for &t in &thresholds {
        let pcfg = PipelineConfig {
            cp_threshold: t,
            ..base.clone()
        };
        let runs = run_many(&series, cp.as_ref(), tof.as_ref(), &pcfg).context("running the pipeline")?;
        let tdir = out.join("traces").join(t.to_string());
        create_dir(&tdir)?;
        for (s, r) in series.iter().zip(&runs) {
            let mut w = create_file(&tdir.join(format!("{}.csv", s.stockname)))?;
            write_trace(&mut w, &r.trace).context("writing trace")?;
            w.flush().context("writing trace")?;
        }
        let stats: Vec<StockStats> = runs.iter().map(|r| r.stats.clone()).collect();
        let agg = aggregate_stocks(&stats);
        let positions: Vec<_> = runs.iter().flat_map(|r| r.positions.clone()).collect();
        write_json(
            &out.join(format!("backtest_{t}.json")),
            &json!({
                "cp_threshold": t,
                "oracle": a.oracle,
                "split_date": split.format(DATE_FORMAT).to_string(),
                "aggregate": agg,
                "stocks": stats,
                "positions": positions,
            }),
        )?;
        println!(
            "{:>10} {:>9} {:>8} {:>9} {:>11} {:>14}",
            t,
            pct(agg.profit),
            agg.days_in,
            agg.times_in,
            pct(agg.year_profit),
            pct(agg.year_profit_avg)
        );
    }

    let experts: Option<Vec<String>> = prep["experts"]
        .as_array()
        .map(|v| v.iter().filter_map(|e| e.as_str().map(String::from)).collect());
    let base_reports = baselines(&a.data, &ds, experts.as_deref(), Some(split))?;
    write_json(&out.join("expert_baseline.json"), &base_reports)?;
    for (name, r) in &base_reports {
        println!(
            "expert {name:<8} YearProfit {} YearProfit_avg {}",
            pct(r["YearProfit"].as_f64().unwrap_or(0.0)),
            pct(r["YearProfit_avg"].as_f64().unwrap_or(0.0))
        );
    }

    if !a.oracle {
        let rows = read_rows(&a.prepared.join("tof_test.csv"), read_tof_rows)?;
        let proba: Vec<f64> = rows
            .iter()
            .map(|r| tof.tof_proba(r.window_start, r.date, &r.features))
            .collect();
        let table = fraction_accuracy(&rows, &proba, base.tof_threshold);
        let mut w = create_file(&out.join("fraction_accuracy.csv"))?;
        writeln!(w, "fraction_pct,rows,accuracy").context("writing fraction table")?;
        for f in &table {
            writeln!(w, "{},{},{}", f.fraction_pct, f.rows, f.accuracy).context("writing fraction table")?;
        }
        w.flush().context("writing fraction table")?;
        println!(
            "trend-or-flat accuracy by fraction: {}",
            table
                .iter()
                .map(|f| format!("{}%: {:.1}%", f.fraction_pct, f.accuracy * 100.0))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    Ok(())
}

fn cmd_baseline(a: &BaselineArgs) -> CliResult<()> {
    let cfg = load_config(a.common.config.as_deref())?;
    let experts = a.experts.clone().or_else(|| cfg.get("prepare", "experts").map(String::from)).map(|v| list(&v));
    let from = a.split_date.as_deref().map(date_arg).transpose()?;
    let ds = load_dataset(&a.data, DefectPolicy::Skip)?;
    let reports = baselines(&a.data, &ds, experts.as_deref(), from)?;
    create_dir(&a.common.out)?;
    write_json(&a.common.out.join("expert_baseline.json"), &reports)?;
    for (name, r) in &reports {
        println!(
            "expert {name:<8} Profit {} Times_in {} YearProfit {} YearProfit_avg {}",
            pct(r["Profit"].as_f64().unwrap_or(0.0)),
            r["Times_in"],
            pct(r["YearProfit"].as_f64().unwrap_or(0.0)),
            pct(r["YearProfit_avg"].as_f64().unwrap_or(0.0))
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_sections_and_comments() {
        let c = ConfigFile::parse("seed = 4\n# note\n[cp]\nmax_depth = 5  # deeper\n[pipeline]\ncp_threshold=0.65\n").unwrap();
        assert_eq!(c.get("", "seed"), Some("4"));
        assert_eq!(c.get("cp", "max_depth"), Some("5"));
        assert_eq!(c.get("pipeline", "cp_threshold"), Some("0.65"));
        assert!(ConfigFile::parse("[cp]\ncolsample = 1\n").is_err());
        assert!(ConfigFile::parse("[nope]\na = 1\n").is_err());
        assert!(ConfigFile::parse("just words\n").is_err());
    }

    #[test]
    fn unlisted_expert_profile_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.ini");
        std::fs::write(&cfg, "[synth]\nexperts = A\nexpert.B = 1, 0, 0\n").unwrap();
        let out = dir.path().join("o");
        let args = ["trendlab", "synth", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        assert_eq!(run(args), 2);
    }

    #[test]
    fn grid_file_parsing() {
        let g = parse_grid("max_depth = 3, 7, 10, 15\nn_estimators = 500,100\nscale_pos_weight = 1, balance\n").unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g[0].1, vec![Some(3.0), Some(7.0), Some(10.0), Some(15.0)]);
        assert_eq!(g[2].1, vec![Some(1.0), None]);
        assert!(parse_grid("max_depth =\n").is_err());
        assert!(parse_grid("depth = 3\n").is_err());
        assert!(parse_grid("").unwrap().is_empty());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["trendlab", "synth", "--stocks", "0", "-o", "/nonexistent/x"]), 2);
        assert_eq!(run(["trendlab", "frobnicate"]), 2);
        assert_eq!(run(["trendlab", "train", "--which", "bogus", "--data", ".", "-o", "."]), 2);
    }

    #[test]
    fn runtime_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing");
        assert_eq!(
            run(["trendlab", "prepare", "--data", missing.to_str().unwrap(), "-o", dir.path().to_str().unwrap()]),
            1
        );
    }
}
