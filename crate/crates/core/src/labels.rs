//! Expert windows, changepoint targets, voting, trigger correction and the
//! date split.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::linear_fit;
use crate::market_data::{ExpertLabelRow, QuoteSeries, Tendency};

/// Search radius, in rows, of [`trigger_correction`].
pub const CORRECTION_RADIUS: usize = 5;

/// Name used for windows produced by [`vote_windows`].
pub const VOTED_EXPERT: &str = "voted";

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("no label rows")]
    EmptyInput,
    #[error("label date {0} has no quote")]
    MissingQuote(NaiveDate),
    #[error("label rows skip quote rows before {0}")]
    LabelGap(NaiveDate),
    #[error("degenerate split at {split_date}: {train} train rows, {test} test rows")]
    DegenerateSplit {
        split_date: NaiveDate,
        train: usize,
        test: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Down,
    Flat,
    Up,
}

impl Direction {
    pub fn code(self) -> i8 {
        match self {
            Direction::Down => -1,
            Direction::Flat => 0,
            Direction::Up => 1,
        }
    }

    pub fn from_code(code: i8) -> Self {
        match code.signum() {
            -1 => Direction::Down,
            0 => Direction::Flat,
            _ => Direction::Up,
        }
    }

    /// Sign of a slope; zero maps to `Flat`.
    pub fn of_slope(slope: f64) -> Self {
        if slope > 0.0 {
            Direction::Up
        } else if slope < 0.0 {
            Direction::Down
        } else {
            Direction::Flat
        }
    }
}

/// A contiguous run of rows `start..=end` of one stock with a single tendency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertWindow {
    pub stockname: String,
    pub expert: String,
    pub start: usize,
    pub end: usize,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub tendency: Tendency,
    pub direction: Direction,
}

impl ExpertWindow {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_trend(&self) -> bool {
        self.tendency == Tendency::Trend
    }
}

/// Direction of a trend over `start..=end`: sign of the OLS slope of log close.
///
/// A zero slope (including one-row windows) counts as up.
pub fn trend_direction(quotes: &QuoteSeries, start: usize, end: usize) -> Direction {
    let logs: Vec<f64> = quotes.bars[start..=end].iter().map(|b| b.close.ln()).collect();
    if logs.len() < 2 {
        return Direction::Up;
    }
    match Direction::of_slope(linear_fit(&logs).slope) {
        Direction::Flat => Direction::Up,
        d => d,
    }
}

fn make_window(
    quotes: &QuoteSeries,
    expert: &str,
    start: usize,
    end: usize,
    tendency: Tendency,
    direction: Direction,
) -> ExpertWindow {
    ExpertWindow {
        stockname: quotes.stockname.clone(),
        expert: expert.to_string(),
        start,
        end,
        start_date: quotes.bars[start].date,
        end_date: quotes.bars[end].date,
        tendency,
        direction,
    }
}

/// Cuts one expert's date-sorted label rows for one stock into windows.
///
/// A window ends wherever `id_select` changes, or the tendency changes within
/// the same `id_select`. Label rows must occupy consecutive quote rows.
pub fn extract_windows(rows: &[ExpertLabelRow], quotes: &QuoteSeries) -> Result<Vec<ExpertWindow>, LabelError> {
    let first = rows.first().ok_or(LabelError::EmptyInput)?;
    let mut windows = Vec::new();
    let mut start = quotes.index_of(first.date).ok_or(LabelError::MissingQuote(first.date))?;
    let mut prev_idx = start;
    let mut prev = first;
    for row in &rows[1..] {
        let idx = quotes.index_of(row.date).ok_or(LabelError::MissingQuote(row.date))?;
        if idx != prev_idx + 1 {
            return Err(LabelError::LabelGap(row.date));
        }
        if row.id_select != prev.id_select || row.tendency != prev.tendency {
            windows.push((start, prev_idx, prev.tendency));
            start = idx;
        }
        prev_idx = idx;
        prev = row;
    }
    windows.push((start, prev_idx, prev.tendency));

    Ok(windows
        .into_iter()
        .map(|(s, e, tendency)| {
            let direction = match tendency {
                Tendency::Flat => Direction::Flat,
                Tendency::Trend => trend_direction(quotes, s, e),
            };
            make_window(quotes, &first.expert, s, e, tendency, direction)
        })
        .collect())
}

/// Per-row changepoint targets over the span covered by a window list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerSeries {
    pub stockname: String,
    pub expert: String,
    /// Quote row of `triggers[0]`.
    pub first_row: usize,
    pub triggers: Vec<bool>,
}

impl TriggerSeries {
    pub fn at_row(&self, row: usize) -> Option<bool> {
        row.checked_sub(self.first_row)
            .and_then(|i| self.triggers.get(i).copied())
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.triggers.iter().enumerate().map(|(i, t)| (self.first_row + i, *t))
    }

    pub fn count(&self) -> usize {
        self.triggers.iter().filter(|t| **t).count()
    }
}

/// Marks the first row of every window but the first.
pub fn new_trigger(windows: &[ExpertWindow]) -> TriggerSeries {
    let (Some(first), Some(last)) = (windows.first(), windows.last()) else {
        return TriggerSeries {
            stockname: String::new(),
            expert: String::new(),
            first_row: 0,
            triggers: Vec::new(),
        };
    };
    let mut triggers = vec![false; last.end + 1 - first.start];
    for w in &windows[1..] {
        triggers[w.start - first.start] = true;
    }
    TriggerSeries {
        stockname: first.stockname.clone(),
        expert: first.expert.clone(),
        first_row: first.start,
        triggers,
    }
}

/// Mean of direction codes rounded half away from zero.
///
/// Integer arithmetic keeps the 50% tie exact: three `1`s and three `0`s vote `1`.
pub fn vote_experts(codes: &[i8]) -> i8 {
    if codes.is_empty() {
        return 0;
    }
    let n = codes.len() as i64;
    let sum: i64 = codes.iter().map(|&c| c as i64).sum();
    let magnitude = (2 * sum.abs() + n) / (2 * n);
    (sum.signum() * magnitude) as i8
}

/// Votes several experts' windows on one stock row by row and re-segments
/// the voted codes into windows attributed to [`VOTED_EXPERT`].
pub fn vote_windows(experts: &[Vec<ExpertWindow>], quotes: &QuoteSeries) -> Vec<ExpertWindow> {
    let mut codes: BTreeMap<usize, Vec<i8>> = BTreeMap::new();
    for windows in experts {
        for w in windows {
            for row in w.start..=w.end {
                codes.entry(row).or_default().push(w.direction.code());
            }
        }
    }
    let mut out = Vec::new();
    let mut current: Option<(usize, usize, i8)> = None;
    for (row, votes) in codes {
        let code = vote_experts(&votes);
        current = match current {
            Some((s, e, c)) if c == code && e + 1 == row => Some((s, row, c)),
            Some((s, e, c)) => {
                out.push((s, e, c));
                Some((row, row, code))
            }
            None => Some((row, row, code)),
        };
    }
    out.extend(current);
    out.into_iter()
        .map(|(s, e, c)| {
            let tendency = if c == 0 { Tendency::Flat } else { Tendency::Trend };
            make_window(quotes, VOTED_EXPERT, s, e, tendency, Direction::from_code(c))
        })
        .collect()
}

const MAX_CORRECTION_PASSES: usize = 64;

/// Earliest index of the minimum (up) or maximum (down) close in `lo..=hi`.
fn local_extremum(closes: &[f64], lo: usize, hi: usize, direction: Direction) -> usize {
    let mut best = lo;
    for i in lo + 1..=hi {
        let better = match direction {
            Direction::Up => closes[i] < closes[best],
            _ => closes[i] > closes[best],
        };
        if better {
            best = i;
        }
    }
    best
}

/// Pulls every up-trend start to the local close minimum and every
/// down-trend start to the local maximum within ±5 rows.
///
/// Each start is moved repeatedly until it is the extremum of its own
/// neighbourhood, and passes over the whole window list repeat until no start
/// moves, so the result is a fixed point. Moves are clamped so every window
/// keeps at least one row; the preceding window's end follows the new start.
pub fn trigger_correction(windows: &[ExpertWindow], quotes: &QuoteSeries) -> Vec<ExpertWindow> {
    if windows.len() < 2 {
        return windows.to_vec();
    }
    let closes = quotes.closes();
    let last_end = windows[windows.len() - 1].end;
    let mut starts: Vec<usize> = windows.iter().map(|w| w.start).collect();

    for _ in 0..MAX_CORRECTION_PASSES {
        let mut changed = false;
        for i in 1..windows.len() {
            let direction = windows[i].direction;
            if direction == Direction::Flat {
                continue;
            }
            let lower = starts[i - 1] + 1;
            let upper = starts.get(i + 1).map_or(last_end, |s| s - 1).min(closes.len() - 1);
            let mut s = starts[i];
            loop {
                let lo = s.saturating_sub(CORRECTION_RADIUS).max(lower);
                let hi = (s + CORRECTION_RADIUS).min(upper);
                let best = local_extremum(&closes, lo, hi, direction);
                if best == s {
                    break;
                }
                s = best;
            }
            if s != starts[i] {
                starts[i] = s;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let end = starts.get(i + 1).map_or(w.end, |s| s - 1);
            ExpertWindow {
                start: starts[i],
                end,
                start_date: quotes.bars[starts[i]].date,
                end_date: quotes.bars[end].date,
                ..w.clone()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContradictionStats {
    /// Rows whose exact feature vector also occurs with the other target.
    pub contradicting_rows: usize,
    /// Positive rows among `contradicting_rows`.
    pub contradicting_positives: usize,
    pub positives: usize,
    /// `contradicting_positives` as a percentage of all positives.
    pub pct_of_positives: f64,
}

impl fmt::Display for ContradictionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.contradicting_positives == 0 {
            write!(f, "0")
        } else {
            write!(f, "{} / {:.1}%", self.contradicting_positives, self.pct_of_positives)
        }
    }
}

fn feature_key(features: &[f64]) -> Vec<u64> {
    // +0.0 folds -0.0 into 0.0 so equal values share a key
    features.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// Counts rows whose feature vector appears with both target values.
pub fn count_contradictions<'a, I>(rows: I) -> ContradictionStats
where
    I: IntoIterator<Item = (&'a [f64], bool)>,
{
    let mut groups: HashMap<Vec<u64>, [usize; 2]> = HashMap::new();
    let mut positives = 0;
    for (features, target) in rows {
        positives += target as usize;
        groups.entry(feature_key(features)).or_default()[target as usize] += 1;
    }
    let (mut rows, mut pos) = (0, 0);
    for [n, p] in groups.into_values() {
        if n > 0 && p > 0 {
            rows += n + p;
            pos += p;
        }
    }
    ContradictionStats {
        contradicting_rows: rows,
        contradicting_positives: pos,
        positives,
        pct_of_positives: if positives == 0 {
            0.0
        } else {
            100.0 * pos as f64 / positives as f64
        },
    }
}

pub trait Dated {
    fn date(&self) -> NaiveDate;
}

pub trait Labeled {
    fn target(&self) -> bool;
}

/// Negatives per positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Balance {
    pub negatives: usize,
    pub positives: usize,
}

impl Balance {
    pub fn of<T: Labeled>(rows: &[T]) -> Self {
        let positives = rows.iter().filter(|r| r.target()).count();
        Self {
            negatives: rows.len() - positives,
            positives,
        }
    }

    /// `None` without positives.
    pub fn ratio(&self) -> Option<f64> {
        (self.positives > 0).then(|| self.negatives as f64 / self.positives as f64)
    }
}

impl fmt::Display for Balance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ratio() {
            None => write!(f, "{}:0", self.negatives),
            Some(r) if r >= 10.0 => write!(f, "{:.0}:1", r),
            Some(r) => write!(f, "{:.2}:1", r),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub split_date: NaiveDate,
}

impl<T: Labeled> DatasetSplit<T> {
    pub fn train_balance(&self) -> Balance {
        Balance::of(&self.train)
    }
}

/// Rows dated before `split_date` train, the rest test.
pub fn split_by_date<T: Dated>(rows: Vec<T>, split_date: NaiveDate) -> Result<DatasetSplit<T>, LabelError> {
    let (train, test): (Vec<T>, Vec<T>) = rows.into_iter().partition(|r| r.date() < split_date);
    if train.is_empty() || test.is_empty() {
        return Err(LabelError::DegenerateSplit {
            split_date,
            train: train.len(),
            test: test.len(),
        });
    }
    Ok(DatasetSplit {
        train,
        test,
        split_date,
    })
}
