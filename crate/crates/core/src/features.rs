//! Feature rows for the changepoint and trend-or-flat classifiers.

use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{Dated, ExpertWindow, Labeled};
use crate::market_data::{parse_date, QuoteSeries, DATE_FORMAT};

/// Days of context on each side of a changepoint candidate.
pub const CP_CONTEXT: usize = 5;
pub const CP_FEATURE_COUNT: usize = 22;
/// Window prefixes shorter than this are dropped from the trend-or-flat data.
pub const MIN_TREND_LEN: usize = 6;
/// Window prefixes, in percent of the window length, used for augmentation.
pub const FRACTION_PCTS: [u32; 11] = [5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

pub const CP_FEATURE_NAMES: [&str; CP_FEATURE_COUNT] = [
    "close_m1", "close_m2", "close_m3", "close_m4", "close_m5", "close_p1", "close_p2", "close_p3", "close_p4",
    "close_p5", "volume_m1", "volume_m2", "volume_m3", "volume_m4", "volume_m5", "volume_p1", "volume_p2",
    "volume_p3", "volume_p4", "volume_p5", "high", "low",
];
pub const TOF_FEATURE_NAMES: [&str; 5] = ["reg_close", "close_r2", "reg_vol", "vol_r2", "len_trend"];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("zero volume at row {row} makes a log ratio undefined")]
    ZeroVolume { row: usize },
    #[error("need at least 2 points, got {0}")]
    TooShort(usize),
    #[error("closes and volumes differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: bad value {value:?} in column {column}")]
    Parse {
        line: usize,
        column: String,
        value: String,
    },
}

/// Least squares line through `(i, ys[i])`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    /// Coefficient of determination; 0 when `ys` has no variance.
    pub r2: f64,
}

/// OLS of `ys` on the day index `0..n`.
pub fn linear_fit(ys: &[f64]) -> LinearFit {
    let n = ys.len();
    if n < 2 || ys.iter().all(|y| *y == ys[0]) {
        return LinearFit { slope: 0.0, r2: 0.0 };
    }
    let nf = n as f64;
    let x_mean = (nf - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut ss_tot = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        let dy = y - y_mean;
        sxy += dx * dy;
        sxx += dx * dx;
        ss_tot += dy * dy;
    }
    let slope = sxy / sxx;
    let ss_res: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let r = y - y_mean - slope * (i as f64 - x_mean);
            r * r
        })
        .sum();
    let r2 = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        0.0
    };
    LinearFit { slope, r2 }
}

/// The 22 ratio features of day `t`, or `None` without full ±5-day context.
///
/// Order: closes t−1..t−5, closes t+1..t+5, volumes t−1..t−5, volumes
/// t+1..t+5 (all relative to day t), then high and low relative to close t.
/// In log mode each entry is the natural log of the raw ratio.
pub fn cp_features(
    series: &QuoteSeries,
    t: usize,
    log_mode: bool,
) -> Result<Option<[f64; CP_FEATURE_COUNT]>, FeatureError> {
    if t < CP_CONTEXT || t + CP_CONTEXT >= series.len() {
        return Ok(None);
    }
    let bars = &series.bars;
    let today = bars[t];
    if today.volume <= 0.0 {
        return Err(FeatureError::ZeroVolume { row: t });
    }
    if log_mode {
        if let Some(k) = (t - CP_CONTEXT..=t + CP_CONTEXT).find(|&k| bars[k].volume <= 0.0) {
            return Err(FeatureError::ZeroVolume { row: k });
        }
    }
    let mut f = [0.0; CP_FEATURE_COUNT];
    for k in 1..=CP_CONTEXT {
        f[k - 1] = bars[t - k].close / today.close;
        f[CP_CONTEXT + k - 1] = bars[t + k].close / today.close;
        f[2 * CP_CONTEXT + k - 1] = bars[t - k].volume / today.volume;
        f[3 * CP_CONTEXT + k - 1] = bars[t + k].volume / today.volume;
    }
    f[20] = today.high / today.close;
    f[21] = today.low / today.close;
    if log_mode {
        for v in &mut f {
            *v = v.ln();
        }
    }
    Ok(Some(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TofFeatures {
    pub reg_close: f64,
    pub close_r2: f64,
    pub reg_vol: f64,
    pub vol_r2: f64,
    pub len_trend: usize,
}

impl TofFeatures {
    pub fn to_array(&self) -> [f64; 5] {
        [self.reg_close, self.close_r2, self.reg_vol, self.vol_r2, self.len_trend as f64]
    }

    /// Sign of `reg_close`: +1, −1 or 0.
    pub fn direction_hint(&self) -> i8 {
        if self.reg_close > 0.0 {
            1
        } else if self.reg_close < 0.0 {
            -1
        } else {
            0
        }
    }
}

/// Regression features of a window prefix.
pub fn tof_features(closes: &[f64], volumes: &[f64], log_mode: bool) -> Result<TofFeatures, FeatureError> {
    if closes.len() != volumes.len() {
        return Err(FeatureError::LengthMismatch(closes.len(), volumes.len()));
    }
    if closes.len() < 2 {
        return Err(FeatureError::TooShort(closes.len()));
    }
    let (c, v) = if log_mode {
        if let Some(row) = volumes.iter().position(|v| *v <= 0.0) {
            return Err(FeatureError::ZeroVolume { row });
        }
        (
            closes.iter().map(|x| x.ln()).collect::<Vec<_>>(),
            volumes.iter().map(|x| x.ln()).collect::<Vec<_>>(),
        )
    } else {
        (closes.to_vec(), volumes.to_vec())
    };
    let fc = linear_fit(&c);
    let fv = linear_fit(&v);
    Ok(TofFeatures {
        reg_close: fc.slope,
        close_r2: fc.r2,
        reg_vol: fv.slope,
        vol_r2: fv.r2,
        len_trend: closes.len(),
    })
}

/// Tof features of rows `start..=end` of a series.
pub fn tof_features_of(
    series: &QuoteSeries,
    start: usize,
    end: usize,
    log_mode: bool,
) -> Result<TofFeatures, FeatureError> {
    let bars = &series.bars[start..=end];
    let closes: Vec<f64> = bars.iter().map(|b| b.close).collect();
    let volumes: Vec<f64> = bars.iter().map(|b| b.volume).collect();
    tof_features(&closes, &volumes, log_mode)
}

/// One changepoint training row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpRow {
    pub stockname: String,
    pub expert: String,
    pub date: NaiveDate,
    pub features: [f64; CP_FEATURE_COUNT],
    pub new_trigger: bool,
}

impl Dated for CpRow {
    fn date(&self) -> NaiveDate {
        self.date
    }
}

impl Labeled for CpRow {
    fn target(&self) -> bool {
        self.new_trigger
    }
}

/// One trend-or-flat training row, computed on a prefix of an expert window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TofRow {
    pub stockname: String,
    pub expert: String,
    /// Last day of the prefix.
    pub date: NaiveDate,
    pub window_start: NaiveDate,
    pub fraction_pct: u32,
    pub features: TofFeatures,
    pub target: bool,
}

impl Dated for TofRow {
    fn date(&self) -> NaiveDate {
        self.date
    }
}

impl Labeled for TofRow {
    fn target(&self) -> bool {
        self.target
    }
}

/// Days in the `pct`% prefix of an `n`-day window: rounded half up, at least 2.
pub fn fraction_days(pct: u32, n: usize) -> usize {
    ((pct as usize * n + 50) / 100).max(2).min(n)
}

/// Trend-or-flat rows for every prefix fraction of a window, dropping
/// prefixes shorter than [`MIN_TREND_LEN`].
pub fn augment_fractions(
    window: &ExpertWindow,
    quotes: &QuoteSeries,
    log_mode: bool,
) -> Result<Vec<TofRow>, FeatureError> {
    let n = window.len();
    let mut out = Vec::new();
    for pct in FRACTION_PCTS {
        let days = fraction_days(pct, n);
        if days < MIN_TREND_LEN {
            continue;
        }
        let end = window.start + days - 1;
        let features = tof_features_of(quotes, window.start, end, log_mode)?;
        out.push(TofRow {
            stockname: window.stockname.clone(),
            expert: window.expert.clone(),
            date: quotes.bars[end].date,
            window_start: window.start_date,
            fraction_pct: pct,
            features,
            target: window.is_trend(),
        });
    }
    Ok(out)
}

fn fmt_date(d: NaiveDate) -> String {
    d.format(DATE_FORMAT).to_string()
}

pub fn write_cp_rows<W: Write>(writer: W, rows: &[CpRow]) -> Result<(), FeatureError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["stockname", "date", "expert"];
    header.extend(CP_FEATURE_NAMES);
    header.push("new_trigger");
    wtr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.stockname.clone(), fmt_date(r.date), r.expert.clone()];
        rec.extend(r.features.iter().map(|v| v.to_string()));
        rec.push((r.new_trigger as u8).to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_tof_rows<W: Write>(writer: W, rows: &[TofRow]) -> Result<(), FeatureError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["stockname", "date", "expert", "window_start", "fraction"];
    header.extend(TOF_FEATURE_NAMES);
    header.push("target");
    wtr.write_record(&header)?;
    for r in rows {
        let f = &r.features;
        wtr.write_record([
            r.stockname.clone(),
            fmt_date(r.date),
            r.expert.clone(),
            fmt_date(r.window_start),
            r.fraction_pct.to_string(),
            f.reg_close.to_string(),
            f.close_r2.to_string(),
            f.reg_vol.to_string(),
            f.vol_r2.to_string(),
            f.len_trend.to_string(),
            (r.target as u8).to_string(),
        ])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

struct Fields<'a> {
    line: usize,
    record: &'a csv::StringRecord,
}

impl Fields<'_> {
    fn get(&self, i: usize) -> Result<&str, FeatureError> {
        self.record.get(i).ok_or_else(|| self.err(i, ""))
    }

    fn err(&self, i: usize, value: &str) -> FeatureError {
        FeatureError::Parse {
            line: self.line,
            column: i.to_string(),
            value: value.to_string(),
        }
    }

    fn date(&self, i: usize) -> Result<NaiveDate, FeatureError> {
        let s = self.get(i)?;
        parse_date(s).ok_or_else(|| self.err(i, s))
    }

    fn num<T: std::str::FromStr>(&self, i: usize) -> Result<T, FeatureError> {
        let s = self.get(i)?;
        s.parse().map_err(|_| self.err(i, s))
    }

    fn flag(&self, i: usize) -> Result<bool, FeatureError> {
        match self.get(i)? {
            "1" => Ok(true),
            "0" => Ok(false),
            s => Err(self.err(i, s)),
        }
    }
}

pub fn read_cp_rows<R: Read>(reader: R) -> Result<Vec<CpRow>, FeatureError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let f = Fields { line: i + 2, record: &rec };
        let mut features = [0.0; CP_FEATURE_COUNT];
        for (k, v) in features.iter_mut().enumerate() {
            *v = f.num(3 + k)?;
        }
        out.push(CpRow {
            stockname: f.get(0)?.to_string(),
            date: f.date(1)?,
            expert: f.get(2)?.to_string(),
            features,
            new_trigger: f.flag(3 + CP_FEATURE_COUNT)?,
        });
    }
    Ok(out)
}

pub fn read_tof_rows<R: Read>(reader: R) -> Result<Vec<TofRow>, FeatureError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let f = Fields { line: i + 2, record: &rec };
        out.push(TofRow {
            stockname: f.get(0)?.to_string(),
            date: f.date(1)?,
            expert: f.get(2)?.to_string(),
            window_start: f.date(3)?,
            fraction_pct: f.num(4)?,
            features: TofFeatures {
                reg_close: f.num(5)?,
                close_r2: f.num(6)?,
                reg_vol: f.num(7)?,
                vol_r2: f.num(8)?,
                len_trend: f.num(9)?,
            },
            target: f.flag(10)?,
        });
    }
    Ok(out)
}
