//! Regime-switching synthetic markets and simulated experts.
//!
//! Log prices follow a random walk with per-regime drift (trends) or a
//! mean-reverting walk around the regime's opening level (flats). Each day is
//! simulated in intraday sub-steps so that high and low are the extremes of
//! the path actually walked, which makes every bar consistent by construction.
//!
//! Simulated experts perturb the true windows in three independent ways:
//! splitting or merging windows, relabelling a window's tendency, and
//! misplacing boundaries by a few rows.

use std::collections::BTreeMap;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{linear_fit, CP_CONTEXT};
use crate::labels::{trend_direction, Direction, ExpertWindow};
use crate::market_data::{ExpertLabelRow, QuoteBar, QuoteSeries, Tendency};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(SynthError::Config(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeKind {
    Up,
    Down,
    Flat,
}

impl RegimeKind {
    pub fn is_trend(self) -> bool {
        self != RegimeKind::Flat
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub kind: RegimeKind,
    pub length: usize,
    /// Per-day log-price drift.
    pub drift: f64,
    /// Per-day log-return standard deviation.
    pub volatility: f64,
    pub volume_level: f64,
    /// Per-day log growth of volume within the regime.
    pub volume_trend: f64,
}

impl RegimeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return config_err("regime length must be >= 1");
        }
        if !(self.volatility >= 0.0) || !self.volatility.is_finite() {
            return config_err("volatility must be finite and >= 0");
        }
        if !(self.volume_level > 0.0) || !self.volume_trend.is_finite() {
            return config_err("volume level must be positive");
        }
        let ok = match self.kind {
            RegimeKind::Up => self.drift > 0.0,
            RegimeKind::Down => self.drift < 0.0,
            RegimeKind::Flat => self.drift == 0.0,
        };
        if !ok || !self.drift.is_finite() {
            return config_err(format!("drift {} does not fit a {:?} regime", self.drift, self.kind));
        }
        Ok(())
    }
}

/// Sampler and simulation settings for one synthetic series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub days: usize,
    pub start_date: NaiveDate,
    pub initial_price: f64,
    pub trend_len_min: usize,
    pub trend_len_max: usize,
    pub flat_len_min: usize,
    pub flat_len_max: usize,
    /// Probability that a trend is followed by a flat rather than another trend.
    pub flat_prob: f64,
    pub drift_min: f64,
    pub drift_max: f64,
    pub volatility: f64,
    pub flat_volatility: f64,
    /// Per-day pull of a flat's log price back to its opening level.
    pub flat_reversion: f64,
    pub substeps: usize,
    pub volume_level: f64,
    /// Per-day log growth of volume during trends.
    pub volume_trend: f64,
    /// Std dev of daily log-volume noise.
    pub volume_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 2500,
            start_date: NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"),
            initial_price: 100.0,
            trend_len_min: 40,
            trend_len_max: 600,
            flat_len_min: 20,
            flat_len_max: 200,
            flat_prob: 0.5,
            drift_min: 0.002,
            drift_max: 0.006,
            volatility: 0.015,
            flat_volatility: 0.015,
            flat_reversion: 0.1,
            substeps: 8,
            volume_level: 1.0e6,
            volume_trend: 0.002,
            volume_noise: 0.2,
        }
    }
}

impl SynthConfig {
    /// Low-noise market used for sanity checks of the whole pipeline.
    pub fn clean() -> Self {
        Self {
            volatility: 0.006,
            flat_volatility: 0.006,
            drift_min: 0.003,
            drift_max: 0.008,
            volume_noise: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return config_err("days must be >= 1");
        }
        if self.trend_len_min == 0 || self.trend_len_min > self.trend_len_max {
            return config_err("trend length range is empty");
        }
        if self.flat_len_min == 0 || self.flat_len_min > self.flat_len_max {
            return config_err("flat length range is empty");
        }
        if !(0.0..=1.0).contains(&self.flat_prob) {
            return config_err("flat_prob must be in [0, 1]");
        }
        if !(self.drift_min > 0.0 && self.drift_min <= self.drift_max) {
            return config_err("drift range must be positive and non-empty");
        }
        if !(self.volatility >= 0.0 && self.flat_volatility >= 0.0) {
            return config_err("volatilities must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.flat_reversion) {
            return config_err("flat_reversion must be in [0, 1]");
        }
        if self.substeps == 0 {
            return config_err("substeps must be >= 1");
        }
        if !(self.initial_price > 0.0 && self.volume_level > 0.0) {
            return config_err("initial price and volume level must be positive");
        }
        if !(self.volume_noise >= 0.0) {
            return config_err("volume_noise must be >= 0");
        }
        Ok(())
    }
}

/// Mixes a base seed with a stream tag and an index into an independent seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_REGIMES: u64 = 1;
const STREAM_PATH: u64 = 2;
const STREAM_EXPERT: u64 = 3;

/// Draws regimes until they cover `cfg.days`; the last one is cut to fit.
/// Two flats never follow each other.
pub fn sample_regimes(cfg: &SynthConfig, seed: u64) -> Result<Vec<RegimeSpec>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_REGIMES, 0));
    let mut regimes = Vec::new();
    let mut covered = 0;
    let mut prev_flat = rng.random_bool(0.5);
    while covered < cfg.days {
        let flat = !prev_flat && rng.random_bool(cfg.flat_prob);
        let drawn = if flat {
            RegimeSpec {
                kind: RegimeKind::Flat,
                length: rng.random_range(cfg.flat_len_min..=cfg.flat_len_max),
                drift: 0.0,
                volatility: cfg.flat_volatility,
                volume_level: cfg.volume_level,
                volume_trend: 0.0,
            }
        } else {
            let up = rng.random_bool(0.5);
            let magnitude = rng.random_range(cfg.drift_min..=cfg.drift_max);
            RegimeSpec {
                kind: if up { RegimeKind::Up } else { RegimeKind::Down },
                length: rng.random_range(cfg.trend_len_min..=cfg.trend_len_max),
                drift: if up { magnitude } else { -magnitude },
                volatility: cfg.volatility,
                volume_level: cfg.volume_level,
                volume_trend: cfg.volume_trend,
            }
        };
        let length = drawn.length.min(cfg.days - covered);
        covered += length;
        regimes.push(RegimeSpec { length, ..drawn });
        prev_flat = flat;
    }
    Ok(regimes)
}

/// Next Monday–Friday date after `d`.
pub fn next_business_day(d: NaiveDate) -> NaiveDate {
    let mut n = d + Duration::days(1);
    while matches!(n.weekday(), Weekday::Sat | Weekday::Sun) {
        n += Duration::days(1);
    }
    n
}

fn first_business_day(d: NaiveDate) -> NaiveDate {
    if matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
        next_business_day(d)
    } else {
        d
    }
}

/// A generated series with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSeries {
    pub series: QuoteSeries,
    pub regimes: Vec<RegimeSpec>,
    /// One window per regime, labelled by the ground-truth expert.
    pub windows: Vec<ExpertWindow>,
}

pub const TRUTH_EXPERT: &str = "truth";

/// Simulates the quote path of `regimes` and returns it with the exact
/// regime boundaries as windows.
pub fn gen_series(stockname: &str, regimes: &[RegimeSpec], cfg: &SynthConfig, seed: u64) -> Result<SynthSeries> {
    if regimes.is_empty() {
        return config_err("at least one regime is required");
    }
    for r in regimes {
        r.validate()?;
    }
    if cfg.substeps == 0 || !(cfg.initial_price > 0.0) {
        return config_err("substeps and initial price must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_PATH, 0));
    let m = cfg.substeps as f64;
    // Log price relative to the initial price, so a still path stays exact.
    let mut x = 0.0f64;
    let price = |v: f64| cfg.initial_price * v.exp();
    let mut date = first_business_day(cfg.start_date);
    let mut bars = Vec::with_capacity(regimes.iter().map(|r| r.length).sum());
    for r in regimes {
        let anchor = x;
        let step_sd = r.volatility / m.sqrt();
        let pull = 1.0 - (1.0 - cfg.flat_reversion).powf(1.0 / m);
        for k in 0..r.length {
            let open = x;
            let (mut hi, mut lo) = (x, x);
            for _ in 0..cfg.substeps {
                let z: f64 = rng.sample(StandardNormal);
                let mean = match r.kind {
                    RegimeKind::Flat => -pull * (x - anchor),
                    _ => r.drift / m,
                };
                x += mean + step_sd * z;
                hi = hi.max(x);
                lo = lo.min(x);
            }
            let noise: f64 = rng.sample(StandardNormal);
            let volume = (r.volume_level * (r.volume_trend * k as f64 + cfg.volume_noise * noise).exp())
                .round()
                .max(1.0);
            let close = price(x);
            bars.push(QuoteBar {
                date,
                open: price(open).min(price(hi)).max(price(lo)),
                high: price(hi).max(close),
                low: price(lo).min(close),
                close,
                volume,
            });
            date = next_business_day(date);
        }
    }
    let series = QuoteSeries::new(stockname, bars).map_err(|e| SynthError::Config(e.to_string()))?;
    let mut windows = Vec::with_capacity(regimes.len());
    let mut start = 0;
    for r in regimes {
        let end = start + r.length - 1;
        let (tendency, direction) = if r.kind.is_trend() {
            (Tendency::Trend, trend_direction(&series, start, end))
        } else {
            (Tendency::Flat, Direction::Flat)
        };
        windows.push(ExpertWindow {
            stockname: stockname.to_string(),
            expert: TRUTH_EXPERT.to_string(),
            start,
            end,
            start_date: series.bars[start].date,
            end_date: series.bars[end].date,
            tendency,
            direction,
        });
        start = end + 1;
    }
    Ok(SynthSeries {
        series,
        regimes: regimes.to_vec(),
        windows,
    })
}

/// Samples regimes and simulates them.
pub fn generate(stockname: &str, cfg: &SynthConfig, seed: u64) -> Result<SynthSeries> {
    let regimes = sample_regimes(cfg, seed)?;
    gen_series(stockname, &regimes, cfg, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertProfile {
    pub name: String,
    /// Maximum boundary misplacement in rows.
    pub jitter_days: usize,
    /// Probability of relabelling a window's tendency.
    pub disagree_prob: f64,
    /// Probability of splitting a trend in two or merging a window with the next.
    pub split_merge_prob: f64,
}

impl ExpertProfile {
    pub fn identity(name: &str) -> Self {
        Self {
            name: name.to_string(),
            jitter_days: 0,
            disagree_prob: 0.0,
            split_merge_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("disagree_prob", self.disagree_prob), ("split_merge_prob", self.split_merge_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return config_err(format!("{what} of expert {} must be in [0, 1]", self.name));
            }
        }
        if self.name.is_empty() || self.name.contains([',', '/', '\\']) {
            return config_err(format!("bad expert name `{}`", self.name));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    start: usize,
    end: usize,
    trend: bool,
}

fn split_merge(segments: Vec<Segment>, p: f64, rng: &mut ChaCha8Rng) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    let mut i = 0;
    while i < segments.len() {
        let s = segments[i];
        if p > 0.0 && rng.random_bool(p) {
            let len = s.end + 1 - s.start;
            if s.trend && len >= 4 {
                let cut = rng.random_range(s.start + 1..s.end);
                out.push(Segment { end: cut - 1, ..s });
                out.push(Segment { start: cut, ..s });
                i += 1;
                continue;
            }
            if let Some(next) = segments.get(i + 1) {
                out.push(Segment { end: next.end, ..s });
                i += 2;
                continue;
            }
        }
        out.push(s);
        i += 1;
    }
    out
}

fn flip_and_merge_flats(segments: Vec<Segment>, p: f64, rng: &mut ChaCha8Rng) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    for mut s in segments {
        if p > 0.0 && rng.random_bool(p) {
            s.trend = !s.trend;
        }
        match out.last_mut() {
            Some(prev) if !prev.trend && !s.trend => prev.end = s.end,
            _ => out.push(s),
        }
    }
    out
}

fn jitter(segments: &mut [Segment], j: usize, rng: &mut ChaCha8Rng) {
    if j == 0 {
        return;
    }
    for i in 1..segments.len() {
        let lo = segments[i - 1].start + 1;
        let hi = segments[i].end;
        let shift = rng.random_range(0..=2 * j) as i64 - j as i64;
        let b = (segments[i].start as i64 + shift).clamp(lo as i64, hi as i64) as usize;
        segments[i].start = b;
        segments[i - 1].end = b - 1;
    }
}

/// Label rows an expert with `profile` would produce for `truth`, one per
/// covered date, with fresh `id_select` numbering from 1.
pub fn gen_expert_labels(
    series: &QuoteSeries,
    truth: &[ExpertWindow],
    profile: &ExpertProfile,
    seed: u64,
) -> Result<Vec<ExpertLabelRow>> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segments: Vec<Segment> = truth
        .iter()
        .map(|w| Segment {
            start: w.start,
            end: w.end,
            trend: w.is_trend(),
        })
        .collect();
    let segments = split_merge(segments, profile.split_merge_prob, &mut rng);
    let mut segments = flip_and_merge_flats(segments, profile.disagree_prob, &mut rng);
    jitter(&mut segments, profile.jitter_days, &mut rng);

    let mut rows = Vec::new();
    for (id, s) in segments.iter().enumerate() {
        let tendency = if s.trend { Tendency::Trend } else { Tendency::Flat };
        for bar in &series.bars[s.start..=s.end] {
            rows.push(ExpertLabelRow {
                date: bar.date,
                stockname: series.stockname.clone(),
                id_select: id as i64 + 1,
                tendency,
                expert: profile.name.clone(),
            });
        }
    }
    Ok(rows)
}

/// One stock of a synthetic universe.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthStock {
    pub synth: SynthSeries,
    /// Label rows per expert, in profile order.
    pub labels: Vec<Vec<ExpertLabelRow>>,
}

pub fn stock_name(index: usize) -> String {
    format!("SYN{index:03}")
}

/// Generates `n_stocks` independent stocks in parallel, each labelled by every expert.
pub fn generate_universe(
    cfg: &SynthConfig,
    n_stocks: usize,
    experts: &[ExpertProfile],
    seed: u64,
) -> Result<Vec<SynthStock>> {
    cfg.validate()?;
    for e in experts {
        e.validate()?;
    }
    (0..n_stocks)
        .into_par_iter()
        .map(|i| {
            let stock_seed = derive_seed(seed, 0, i as u64);
            let synth = generate(&stock_name(i), cfg, stock_seed)?;
            let labels = experts
                .iter()
                .enumerate()
                .map(|(e, p)| {
                    let s = derive_seed(stock_seed, STREAM_EXPERT, e as u64);
                    gen_expert_labels(&synth.series, &synth.windows, p, s)
                })
                .collect::<Result<_>>()?;
            Ok(SynthStock { synth, labels })
        })
        .collect()
}

/// Ground truth keyed by stock, as written to `truth.json`.
pub fn truth_map(stocks: &[SynthStock]) -> BTreeMap<String, Vec<ExpertWindow>> {
    stocks
        .iter()
        .map(|s| (s.synth.series.stockname.clone(), s.synth.windows.clone()))
        .collect()
}

/// A trade the ledger books for one trend window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub window_start: usize,
    pub entry: usize,
    pub exit: usize,
    pub direction: i8,
    pub profit: f64,
}

/// Profit of trading every trend window of `windows` the way a detector
/// with perfect but lagged knowledge of window starts would.
///
/// A window starting at row `s` is learnt at row `s + lag` (if that row and
/// `s − lag` exist). The trade enters at the first row from there on where
/// the closing-price regression slope of `s..=row` is non-zero, in its
/// direction, and exits when the next window start is learnt or at the last
/// row.
pub fn regime_ledger(series: &QuoteSeries, windows: &[ExpertWindow], log_mode: bool) -> Vec<LedgerEntry> {
    let lag = CP_CONTEXT;
    let n = series.len();
    let closes = series.closes();
    let learnt = |s: usize| s >= lag && s + lag < n;
    let mut out = Vec::new();
    for (i, w) in windows.iter().enumerate() {
        if !w.is_trend() || !learnt(w.start) {
            continue;
        }
        let exit = windows[i + 1..]
            .iter()
            .map(|nw| nw.start)
            .find(|&s| learnt(s))
            .map_or(n - 1, |s| s + lag);
        let last_entry = if exit == n - 1 && !windows[i + 1..].iter().any(|nw| learnt(nw.start)) {
            n - 1
        } else {
            exit - 1
        };
        for d in w.start + lag..=last_entry {
            let ys: Vec<f64> = closes[w.start..=d]
                .iter()
                .map(|&c| if log_mode { c.ln() } else { c })
                .collect();
            let slope = linear_fit(&ys).slope;
            if slope != 0.0 {
                let direction = if slope > 0.0 { 1 } else { -1 };
                out.push(LedgerEntry {
                    window_start: w.start,
                    entry: d,
                    exit,
                    direction,
                    profit: direction as f64 * (closes[exit] - closes[d]) / closes[d],
                });
                break;
            }
        }
    }
    out
}
