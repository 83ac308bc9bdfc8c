//! Day-by-day composition of the changepoint and trend-or-flat models, with
//! position bookkeeping and profit reports.
//!
//! A changepoint decision for day `t` needs closes up to `t + 5`, so it is
//! acted on at day `t + 5`: any open position closes at that day's close and
//! a new window starts at `t`. Once the window is `min_window_days` long the
//! trend-or-flat model is asked about the window prefix every day; its first
//! positive answer opens a position in the direction of the prefix's
//! closing-price slope. At most one position is opened per window.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{cp_features, tof_features_of, FeatureError, TofFeatures, TofRow, CP_CONTEXT, CP_FEATURE_COUNT, FRACTION_PCTS};
use crate::gbdt::GbdtModel;
use crate::labels::{Direction, ExpertWindow};
use crate::market_data::{QuoteSeries, DATE_FORMAT};

/// Business days per year.
pub const YEAR_DAYS: f64 = 250.0;
/// Days between a changepoint and the moment it can be known.
pub const CP_LAG_DAYS: usize = CP_CONTEXT;
/// Shortest series with one computable changepoint row.
pub const MIN_SERIES_LEN: usize = 2 * CP_CONTEXT + 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("series {stockname} has {len} bars; at least {MIN_SERIES_LEN} are needed")]
    SeriesTooShort { stockname: String, len: usize },
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("{stockname}: {source}")]
    Feature {
        stockname: String,
        #[source]
        source: FeatureError,
    },
    #[error("writing trace: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub cp_threshold: f64,
    pub tof_threshold: f64,
    pub min_window_days: usize,
    pub log_mode: bool,
    /// Keep a position open when the trend-or-flat model turns negative,
    /// closing it only on the next changepoint.
    pub hold_until_changepoint: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cp_threshold: 0.5,
            tof_threshold: 0.5,
            min_window_days: 6,
            log_mode: true,
            hold_until_changepoint: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("cp_threshold", self.cp_threshold), ("tof_threshold", self.tof_threshold)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(PipelineError::Config(format!("{name} {t} outside (0, 1)")));
            }
        }
        if self.min_window_days < 2 {
            return Err(PipelineError::Config("min_window_days must be >= 2".into()));
        }
        Ok(())
    }
}

/// Changepoint probability of a day from its features.
pub trait CpScorer: Sync {
    fn cp_proba(&self, date: NaiveDate, features: &[f64; CP_FEATURE_COUNT]) -> f64;
}

/// Trend probability of the window prefix `window_start..=date`.
pub trait TofScorer: Sync {
    fn tof_proba(&self, window_start: NaiveDate, date: NaiveDate, features: &TofFeatures) -> f64;
}

impl CpScorer for GbdtModel {
    fn cp_proba(&self, _date: NaiveDate, features: &[f64; CP_FEATURE_COUNT]) -> f64 {
        self.predict_row(features)
    }
}

impl TofScorer for GbdtModel {
    fn tof_proba(&self, _window_start: NaiveDate, _date: NaiveDate, features: &TofFeatures) -> f64 {
        self.predict_row(&features.to_array())
    }
}

impl<F: Fn(NaiveDate, &[f64; CP_FEATURE_COUNT]) -> f64 + Sync> CpScorer for F {
    fn cp_proba(&self, date: NaiveDate, features: &[f64; CP_FEATURE_COUNT]) -> f64 {
        self(date, features)
    }
}

/// Scores changepoints from known window starts.
#[derive(Debug, Clone, Default)]
pub struct OracleCp {
    starts: BTreeSet<NaiveDate>,
}

impl OracleCp {
    /// Every window start except the first counts as a changepoint.
    pub fn new<'a>(windows: impl IntoIterator<Item = &'a [ExpertWindow]>) -> Self {
        let starts = windows
            .into_iter()
            .flat_map(|ws| ws.iter().skip(1).map(|w| w.start_date))
            .collect();
        Self { starts }
    }
}

impl CpScorer for OracleCp {
    fn cp_proba(&self, date: NaiveDate, _features: &[f64; CP_FEATURE_COUNT]) -> f64 {
        if self.starts.contains(&date) {
            1.0
        } else {
            0.0
        }
    }
}

/// Scores a prefix as trend exactly when a known trend window starts at its first day.
#[derive(Debug, Clone, Default)]
pub struct OracleTof {
    trend_starts: BTreeSet<NaiveDate>,
}

impl OracleTof {
    pub fn new<'a>(windows: impl IntoIterator<Item = &'a [ExpertWindow]>) -> Self {
        let trend_starts = windows
            .into_iter()
            .flat_map(|ws| ws.iter().filter(|w| w.is_trend()).map(|w| w.start_date))
            .collect();
        Self { trend_starts }
    }
}

impl TofScorer for OracleTof {
    fn tof_proba(&self, window_start: NaiveDate, _date: NaiveDate, _features: &TofFeatures) -> f64 {
        if self.trend_starts.contains(&window_start) {
            1.0
        } else {
            0.0
        }
    }
}

/// `direction · (exit − entry) / entry`.
pub fn trend_profit(entry_close: f64, exit_close: f64, direction: i8) -> f64 {
    direction as f64 * (exit_close - entry_close) / entry_close
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub stockname: String,
    /// +1 long, −1 short.
    pub direction: i8,
    pub entry_idx: usize,
    pub exit_idx: usize,
    pub entry_date: NaiveDate,
    pub exit_date: NaiveDate,
    pub entry_close: f64,
    pub exit_close: f64,
    pub profit: f64,
}

impl Position {
    /// Business days held, counting entry and exit days.
    pub fn days_in(&self) -> usize {
        self.exit_idx + 1 - self.entry_idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionState {
    Long,
    Short,
    Out,
}

impl PositionState {
    pub fn as_str(self) -> &'static str {
        match self {
            PositionState::Long => "long",
            PositionState::Short => "short",
            PositionState::Out => "out",
        }
    }
}

/// One day of the audit trace. `cp_proba` is day `date`'s own changepoint
/// score (computed from bars up to five days later); every other field uses
/// bars up to `date` only and reflects the state after the day's actions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub date: NaiveDate,
    pub cp_proba: Option<f64>,
    pub cp_signal: Option<bool>,
    pub window_id: Option<usize>,
    pub tof_proba: Option<f64>,
    pub tof_signal: Option<bool>,
    pub direction: i8,
    pub position_state: PositionState,
}

/// Profit totals of one stock, split by side.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StockStats {
    pub stockname: String,
    #[serde(rename = "Profit")]
    pub profit: f64,
    #[serde(rename = "Days_in")]
    pub days_in: usize,
    #[serde(rename = "Times_in")]
    pub times_in: usize,
    #[serde(rename = "Profit_lng")]
    pub profit_lng: f64,
    #[serde(rename = "Days_in_lng")]
    pub days_in_lng: usize,
    #[serde(rename = "Times_in_lng")]
    pub times_in_lng: usize,
    #[serde(rename = "Profit_sht")]
    pub profit_sht: f64,
    #[serde(rename = "Days_in_sht")]
    pub days_in_sht: usize,
    #[serde(rename = "Times_in_sht")]
    pub times_in_sht: usize,
    /// Days available to trade, in or out of position.
    pub datapoints: usize,
}

impl StockStats {
    pub fn from_positions(stockname: &str, positions: &[Position], datapoints: usize) -> Self {
        let mut s = StockStats {
            stockname: stockname.to_string(),
            datapoints,
            ..Default::default()
        };
        for p in positions {
            s.record(p.direction, p.profit, p.days_in());
        }
        s.profit = s.profit_lng + s.profit_sht;
        s.days_in = s.days_in_lng + s.days_in_sht;
        s.times_in = s.times_in_lng + s.times_in_sht;
        s
    }

    fn record(&mut self, direction: i8, profit: f64, days: usize) {
        if direction > 0 {
            self.profit_lng += profit;
            self.days_in_lng += days;
            self.times_in_lng += 1;
        } else {
            self.profit_sht += profit;
            self.days_in_sht += days;
            self.times_in_sht += 1;
        }
    }
}

/// Totals over stocks with the per-day and annualised indicators.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    #[serde(rename = "numStocks")]
    pub num_stocks: usize,
    #[serde(rename = "Profit")]
    pub profit: f64,
    #[serde(rename = "Days_in")]
    pub days_in: usize,
    #[serde(rename = "Times_in")]
    pub times_in: usize,
    #[serde(rename = "Profit_lng")]
    pub profit_lng: f64,
    #[serde(rename = "Days_in_lng")]
    pub days_in_lng: usize,
    #[serde(rename = "Times_in_lng")]
    pub times_in_lng: usize,
    #[serde(rename = "Profit_sht")]
    pub profit_sht: f64,
    #[serde(rename = "Days_in_sht")]
    pub days_in_sht: usize,
    #[serde(rename = "Times_in_sht")]
    pub times_in_sht: usize,
    pub datapoints: usize,
    #[serde(rename = "DayProfit")]
    pub day_profit: f64,
    #[serde(rename = "YearProfit")]
    pub year_profit: f64,
    #[serde(rename = "YearProfit_avg")]
    pub year_profit_avg: f64,
    /// Set when no day was spent in position, so `DayProfit` and
    /// `YearProfit` are reported as 0.
    pub no_positions: bool,
}

/// Sums `stats` and derives `DayProfit = Profit/Days_in`,
/// `YearProfit = DayProfit·250` and `YearProfit_avg = Profit/datapoints·250`.
pub fn aggregate(stats: &[StockStats], num_datapoints: usize) -> BacktestReport {
    let mut r = BacktestReport {
        num_stocks: stats.len(),
        datapoints: num_datapoints,
        ..Default::default()
    };
    for s in stats {
        r.profit_lng += s.profit_lng;
        r.days_in_lng += s.days_in_lng;
        r.times_in_lng += s.times_in_lng;
        r.profit_sht += s.profit_sht;
        r.days_in_sht += s.days_in_sht;
        r.times_in_sht += s.times_in_sht;
    }
    r.profit = r.profit_lng + r.profit_sht;
    r.days_in = r.days_in_lng + r.days_in_sht;
    r.times_in = r.times_in_lng + r.times_in_sht;
    if r.days_in == 0 {
        r.no_positions = true;
    } else {
        r.day_profit = r.profit / r.days_in as f64;
        r.year_profit = r.day_profit * YEAR_DAYS;
    }
    if num_datapoints > 0 {
        r.year_profit_avg = r.profit / num_datapoints as f64 * YEAR_DAYS;
    }
    r
}

/// Aggregate over stocks using the sum of their datapoints.
pub fn aggregate_stocks(stats: &[StockStats]) -> BacktestReport {
    aggregate(stats, stats.iter().map(|s| s.datapoints).sum())
}

/// Positions an expert implies: every trend window held from its first to its last day.
pub fn expert_positions(series: &QuoteSeries, windows: &[ExpertWindow]) -> Vec<Position> {
    windows
        .iter()
        .filter(|w| w.is_trend() && w.direction != Direction::Flat)
        .map(|w| {
            let direction = w.direction.code();
            let (entry_close, exit_close) = (series.bars[w.start].close, series.bars[w.end].close);
            Position {
                stockname: series.stockname.clone(),
                direction,
                entry_idx: w.start,
                exit_idx: w.end,
                entry_date: w.start_date,
                exit_date: w.end_date,
                entry_close,
                exit_close,
                profit: trend_profit(entry_close, exit_close, direction),
            }
        })
        .collect()
}

/// Per-stock statistics of an expert's labelling; datapoints are the labelled days.
pub fn expert_stats(series: &QuoteSeries, windows: &[ExpertWindow]) -> StockStats {
    let labelled = windows.iter().map(|w| w.len()).sum();
    StockStats::from_positions(&series.stockname, &expert_positions(series, windows), labelled)
}

/// Report of an expert's labelling used as a trading strategy.
pub fn expert_baseline(series: &QuoteSeries, windows: &[ExpertWindow]) -> BacktestReport {
    aggregate_stocks(&[expert_stats(series, windows)])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineRun {
    pub trace: Vec<TraceRow>,
    pub stats: StockStats,
    pub positions: Vec<Position>,
}

struct Window {
    id: usize,
    start: usize,
    traded: bool,
}

struct Open {
    direction: i8,
    entry: usize,
}

fn close_position(series: &QuoteSeries, open: Open, exit: usize) -> Position {
    let (entry_close, exit_close) = (series.bars[open.entry].close, series.bars[exit].close);
    Position {
        stockname: series.stockname.clone(),
        direction: open.direction,
        entry_idx: open.entry,
        exit_idx: exit,
        entry_date: series.bars[open.entry].date,
        exit_date: series.bars[exit].date,
        entry_close,
        exit_close,
        profit: trend_profit(entry_close, exit_close, open.direction),
    }
}

/// Runs both models over `series` day by day.
pub fn run_pipeline(
    series: &QuoteSeries,
    cp: &dyn CpScorer,
    tof: &dyn TofScorer,
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    cfg.validate()?;
    let n = series.len();
    if n < MIN_SERIES_LEN {
        return Err(PipelineError::SeriesTooShort {
            stockname: series.stockname.clone(),
            len: n,
        });
    }
    let feature_err = |source| PipelineError::Feature {
        stockname: series.stockname.clone(),
        source,
    };
    let mut cp_proba = vec![None; n];
    for (t, slot) in cp_proba.iter_mut().enumerate() {
        if let Some(f) = cp_features(series, t, cfg.log_mode).map_err(feature_err)? {
            *slot = Some(cp.cp_proba(series.bars[t].date, &f));
        }
    }

    let mut trace = Vec::with_capacity(n);
    let mut positions = Vec::new();
    let mut window: Option<Window> = None;
    let mut open: Option<Open> = None;
    let mut next_id = 0;
    for d in 0..n {
        if let Some(t) = d.checked_sub(CP_LAG_DAYS) {
            if cp_proba[t].is_some_and(|p| p >= cfg.cp_threshold) {
                if let Some(o) = open.take() {
                    positions.push(close_position(series, o, d));
                }
                window = Some(Window {
                    id: next_id,
                    start: t,
                    traded: false,
                });
                next_id += 1;
            }
        }

        let (mut tof_proba, mut tof_signal) = (None, None);
        if let Some(w) = window.as_mut() {
            if d + 1 - w.start >= cfg.min_window_days {
                let f = tof_features_of(series, w.start, d, cfg.log_mode).map_err(feature_err)?;
                let p = tof.tof_proba(series.bars[w.start].date, series.bars[d].date, &f);
                let signal = p >= cfg.tof_threshold;
                tof_proba = Some(p);
                tof_signal = Some(signal);
                if signal && !w.traded && open.is_none() {
                    let direction = f.direction_hint();
                    if direction != 0 {
                        open = Some(Open { direction, entry: d });
                        w.traded = true;
                    }
                } else if !signal && !cfg.hold_until_changepoint {
                    if let Some(o) = open.take() {
                        positions.push(close_position(series, o, d));
                    }
                }
            }
        }

        let direction = open.as_ref().map_or(0, |o| o.direction);
        trace.push(TraceRow {
            date: series.bars[d].date,
            cp_proba: cp_proba[d],
            cp_signal: cp_proba[d].map(|p| p >= cfg.cp_threshold),
            window_id: window.as_ref().map(|w| w.id),
            tof_proba,
            tof_signal,
            direction,
            position_state: match direction {
                1 => PositionState::Long,
                -1 => PositionState::Short,
                _ => PositionState::Out,
            },
        });
    }
    if let Some(o) = open.take() {
        positions.push(close_position(series, o, n - 1));
    }
    let stats = StockStats::from_positions(&series.stockname, &positions, n);
    Ok(PipelineRun {
        trace,
        stats,
        positions,
    })
}

/// Runs every series in parallel; results keep the input order.
pub fn run_many(
    series: &[QuoteSeries],
    cp: &dyn CpScorer,
    tof: &dyn TofScorer,
    cfg: &PipelineConfig,
) -> Result<Vec<PipelineRun>> {
    series.par_iter().map(|s| run_pipeline(s, cp, tof, cfg)).collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub const TRACE_HEADER: &str = "date,cp_proba,cp_signal,window_id,tof_proba,tof_signal,direction,position_state";

pub fn write_trace<W: Write>(mut w: W, trace: &[TraceRow]) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.date.format(DATE_FORMAT),
            opt(r.cp_proba),
            opt(r.cp_signal.map(u8::from)),
            opt(r.window_id),
            opt(r.tof_proba),
            opt(r.tof_signal.map(u8::from)),
            r.direction,
            r.position_state.as_str()
        )?;
    }
    Ok(())
}

/// Trend-or-flat accuracy for one prefix fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FractionAccuracy {
    pub fraction_pct: u32,
    pub rows: usize,
    pub accuracy: f64,
}

/// Accuracy per prefix fraction, in increasing fraction order; fractions
/// without rows are omitted.
pub fn fraction_accuracy(rows: &[TofRow], proba: &[f64], threshold: f64) -> Vec<FractionAccuracy> {
    let mut tally: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (r, &p) in rows.iter().zip(proba) {
        let e = tally.entry(r.fraction_pct).or_default();
        e.0 += 1;
        e.1 += usize::from((p >= threshold) == r.target);
    }
    FRACTION_PCTS
        .iter()
        .filter_map(|pct| {
            tally.get(pct).map(|&(n, ok)| FractionAccuracy {
                fraction_pct: *pct,
                rows: n,
                accuracy: ok as f64 / n as f64,
            })
        })
        .collect()
}
