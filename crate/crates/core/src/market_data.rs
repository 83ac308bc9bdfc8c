//! Quote series and expert label files.
//!
//! Two CSV file kinds are supported, both UTF-8 with a header row and ISO
//! dates:
//!
//! * quotes: `date,open,high,low,close,volume,stockname`
//! * labels: `date,stockname,id_select,type,username`, where `type` is one of
//!   `Trend`, `Flat` or `N/A`. A label file may additionally carry the quote
//!   columns `open,high,low,close,volume` of the bars the expert looked at;
//!   those are cross-checked against every other quote source on merge.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DATE_FORMAT: &str = "%Y-%m-%d";
pub const QUOTE_HEADER: [&str; 7] = ["date", "open", "high", "low", "close", "volume", "stockname"];
pub const LABEL_HEADER: [&str; 5] = ["date", "stockname", "id_select", "type", "username"];

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: cannot parse column `{column}` value {value:?}")]
    Parse {
        file: String,
        line: usize,
        column: String,
        value: String,
    },
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file}:{line}: {reason}")]
    Invariant {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{file}: duplicate date {date} for stock {stockname}")]
    DuplicateDate {
        file: String,
        date: NaiveDate,
        stockname: String,
    },
    #[error("defect file {file}: {reason}")]
    DefectFile { file: String, reason: String },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, MarketDataError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuoteBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl QuoteBar {
    /// Checks the OHLC ordering and sign constraints.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(format!("non-positive price on {}", self.date));
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(format!("negative volume on {}", self.date));
        }
        if self.low > self.open.min(self.close) || self.open.max(self.close) > self.high {
            return Err(format!(
                "inconsistent bar on {}: low {} high {} open {} close {}",
                self.date, self.low, self.high, self.open, self.close
            ));
        }
        Ok(())
    }

    fn same_quote(&self, other: &QuoteBar) -> bool {
        self.open == other.open
            && self.high == other.high
            && self.low == other.low
            && self.close == other.close
            && self.volume == other.volume
    }
}

/// Date-sorted bars of one stock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteSeries {
    pub stockname: String,
    pub bars: Vec<QuoteBar>,
}

impl QuoteSeries {
    /// Builds a series, sorting bars and enforcing the bar and uniqueness invariants.
    pub fn new(stockname: impl Into<String>, mut bars: Vec<QuoteBar>) -> Result<Self> {
        let stockname = stockname.into();
        for (i, bar) in bars.iter().enumerate() {
            bar.validate().map_err(|reason| MarketDataError::Invariant {
                file: stockname.clone(),
                line: i + 1,
                reason,
            })?;
        }
        bars.sort_by_key(|b| b.date);
        if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(MarketDataError::DuplicateDate {
                file: stockname.clone(),
                date: w[0].date,
                stockname,
            });
        }
        Ok(Self { stockname, bars })
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.volume).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.bars.iter().map(|b| b.date).collect()
    }

    /// Row index of `date`, if present.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.bars.binary_search_by_key(&date, |b| b.date).ok()
    }

    /// Sub-series of bars with `from <= date`, optionally bounded above (exclusive).
    pub fn slice_dates(&self, from: Option<NaiveDate>, until: Option<NaiveDate>) -> QuoteSeries {
        let bars = self
            .bars
            .iter()
            .filter(|b| from.is_none_or(|f| b.date >= f) && until.is_none_or(|u| b.date < u))
            .copied()
            .collect();
        QuoteSeries {
            stockname: self.stockname.clone(),
            bars,
        }
    }

    /// First `n` bars.
    pub fn truncated(&self, n: usize) -> QuoteSeries {
        QuoteSeries {
            stockname: self.stockname.clone(),
            bars: self.bars[..n.min(self.bars.len())].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tendency {
    Trend,
    Flat,
}

impl Tendency {
    /// Parses the label `type` column; `N/A` is folded into `Flat`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "Trend" => Some(Tendency::Trend),
            "Flat" | "N/A" => Some(Tendency::Flat),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Tendency::Trend => "Trend",
            Tendency::Flat => "Flat",
        }
    }
}

impl fmt::Display for Tendency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExpertLabelRow {
    pub date: NaiveDate,
    pub stockname: String,
    pub id_select: i64,
    pub tendency: Tendency,
    pub expert: String,
}

/// Column names used when reading a quote file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuoteSchema {
    pub date: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
    pub stockname: String,
}

impl Default for QuoteSchema {
    fn default() -> Self {
        let [date, open, high, low, close, volume, stockname] = QUOTE_HEADER.map(String::from);
        Self {
            date,
            open,
            high,
            low,
            close,
            volume,
            stockname,
        }
    }
}

struct Header<'a> {
    file: &'a str,
    names: Vec<String>,
}

impl<'a> Header<'a> {
    fn new(file: &'a str, record: &csv::StringRecord) -> Self {
        Self {
            file,
            names: record.iter().map(|s| s.trim().to_string()).collect(),
        }
    }

    fn find(&self, column: &str) -> Option<usize> {
        self.names.iter().position(|c| c == column)
    }

    fn require(&self, column: &str) -> Result<usize> {
        self.find(column).ok_or_else(|| MarketDataError::MissingColumn {
            file: self.file.to_string(),
            column: column.to_string(),
        })
    }
}

struct Cells<'a> {
    file: &'a str,
    line: usize,
    record: &'a csv::StringRecord,
}

impl Cells<'_> {
    fn raw(&self, idx: usize, column: &str) -> Result<&str> {
        self.record
            .get(idx)
            .map(str::trim)
            .ok_or_else(|| self.parse_error(column, ""))
    }

    fn parse_error(&self, column: &str, value: &str) -> MarketDataError {
        MarketDataError::Parse {
            file: self.file.to_string(),
            line: self.line,
            column: column.to_string(),
            value: value.to_string(),
        }
    }

    fn date(&self, idx: usize, column: &str) -> Result<NaiveDate> {
        let s = self.raw(idx, column)?;
        NaiveDate::parse_from_str(s, DATE_FORMAT).map_err(|_| self.parse_error(column, s))
    }

    fn number(&self, idx: usize, column: &str) -> Result<f64> {
        let s = self.raw(idx, column)?;
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.parse_error(column, s)),
        }
    }

    fn integer(&self, idx: usize, column: &str) -> Result<i64> {
        let s = self.raw(idx, column)?;
        s.parse::<i64>().map_err(|_| self.parse_error(column, s))
    }
}

fn open_file(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| MarketDataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

/// Loads and validates a single-stock quote file.
pub fn load_quotes(path: &Path, schema: &QuoteSchema) -> Result<QuoteSeries> {
    read_quotes(open_file(path)?, schema, &path.display().to_string())
}

pub fn read_quotes<R: Read>(reader: R, schema: &QuoteSchema, file: &str) -> Result<QuoteSeries> {
    let mut rdr = csv_reader(reader);
    let csv_err = |source| MarketDataError::Csv {
        file: file.to_string(),
        source,
    };
    let header = Header::new(file, rdr.headers().map_err(csv_err)?);
    let cols = [
        header.require(&schema.date)?,
        header.require(&schema.open)?,
        header.require(&schema.high)?,
        header.require(&schema.low)?,
        header.require(&schema.close)?,
        header.require(&schema.volume)?,
        header.require(&schema.stockname)?,
    ];
    let mut stockname: Option<String> = None;
    let mut bars = Vec::new();
    let mut seen: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let line = i + 2;
        let cells = Cells {
            file,
            line,
            record: &record,
        };
        let bar = QuoteBar {
            date: cells.date(cols[0], &schema.date)?,
            open: cells.number(cols[1], &schema.open)?,
            high: cells.number(cols[2], &schema.high)?,
            low: cells.number(cols[3], &schema.low)?,
            close: cells.number(cols[4], &schema.close)?,
            volume: cells.number(cols[5], &schema.volume)?,
        };
        let name = cells.raw(cols[6], &schema.stockname)?;
        match &stockname {
            None => stockname = Some(name.to_string()),
            Some(s) if s != name => {
                return Err(MarketDataError::Invariant {
                    file: file.to_string(),
                    line,
                    reason: format!("mixed stocknames {s} and {name}"),
                })
            }
            _ => {}
        }
        bar.validate().map_err(|reason| MarketDataError::Invariant {
            file: file.to_string(),
            line,
            reason,
        })?;
        if seen.insert(bar.date, line).is_some() {
            return Err(MarketDataError::DuplicateDate {
                file: file.to_string(),
                date: bar.date,
                stockname: name.to_string(),
            });
        }
        bars.push(bar);
    }
    bars.sort_by_key(|b| b.date);
    Ok(QuoteSeries {
        stockname: stockname.unwrap_or_default(),
        bars,
    })
}

pub fn write_quotes<W: Write>(writer: W, series: &QuoteSeries) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(QUOTE_HEADER)?;
    for b in &series.bars {
        wtr.write_record([
            b.date.format(DATE_FORMAT).to_string(),
            b.open.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.close.to_string(),
            b.volume.to_string(),
            series.stockname.clone(),
        ])?;
    }
    wtr.flush()
}

/// One expert's label file for one stock, possibly carrying its own quotes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub source: String,
    pub rows: Vec<ExpertLabelRow>,
    pub quotes: Option<QuoteSeries>,
}

pub fn load_label_file(path: &Path) -> Result<LabelFile> {
    read_label_file(open_file(path)?, &path.display().to_string())
}

pub fn read_label_file<R: Read>(reader: R, file: &str) -> Result<LabelFile> {
    let mut rdr = csv_reader(reader);
    let csv_err = |source| MarketDataError::Csv {
        file: file.to_string(),
        source,
    };
    let header = Header::new(file, rdr.headers().map_err(csv_err)?);
    let c_date = header.require("date")?;
    let c_stock = header.require("stockname")?;
    let c_id = header.require("id_select")?;
    let c_type = header.require("type")?;
    let c_user = header.require("username")?;
    let quote_cols: Option<Vec<usize>> = ["open", "high", "low", "close", "volume"]
        .iter()
        .map(|c| header.find(c))
        .collect();

    let mut rows = Vec::new();
    let mut bars = Vec::new();
    let mut pair: Option<(String, String)> = None;
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let line = i + 2;
        let cells = Cells {
            file,
            line,
            record: &record,
        };
        let date = cells.date(c_date, "date")?;
        let stockname = cells.raw(c_stock, "stockname")?.to_string();
        let expert = cells.raw(c_user, "username")?.to_string();
        let raw_type = cells.raw(c_type, "type")?;
        let tendency = Tendency::parse(raw_type).ok_or_else(|| cells.parse_error("type", raw_type))?;
        let id_select = cells.integer(c_id, "id_select")?;
        match &pair {
            None => pair = Some((stockname.clone(), expert.clone())),
            Some((s, e)) if *s != stockname || *e != expert => {
                return Err(MarketDataError::Invariant {
                    file: file.to_string(),
                    line,
                    reason: format!("file mixes ({s}, {e}) with ({stockname}, {expert})"),
                })
            }
            _ => {}
        }
        if let Some(qc) = &quote_cols {
            let bar = QuoteBar {
                date,
                open: cells.number(qc[0], "open")?,
                high: cells.number(qc[1], "high")?,
                low: cells.number(qc[2], "low")?,
                close: cells.number(qc[3], "close")?,
                volume: cells.number(qc[4], "volume")?,
            };
            bar.validate().map_err(|reason| MarketDataError::Invariant {
                file: file.to_string(),
                line,
                reason,
            })?;
            bars.push(bar);
        }
        rows.push(ExpertLabelRow {
            date,
            stockname,
            id_select,
            tendency,
            expert,
        });
    }
    rows.sort_by_key(|r| r.date);
    let quotes = match (quote_cols, pair.as_ref()) {
        (Some(_), Some((stock, _))) => Some(QuoteSeries::new(stock.clone(), bars).map_err(|e| match e {
            MarketDataError::DuplicateDate { date, stockname, .. } => MarketDataError::DuplicateDate {
                file: file.to_string(),
                date,
                stockname,
            },
            other => other,
        })?),
        _ => None,
    };
    Ok(LabelFile {
        source: file.to_string(),
        rows,
        quotes,
    })
}

pub fn write_labels<W: Write>(writer: W, rows: &[ExpertLabelRow]) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(LABEL_HEADER)?;
    for r in rows {
        wtr.write_record([
            r.date.format(DATE_FORMAT).to_string(),
            r.stockname.clone(),
            r.id_select.to_string(),
            r.tendency.as_str().to_string(),
            r.expert.clone(),
        ])?;
    }
    wtr.flush()
}

/// What to do with a file that contradicts already merged data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DefectPolicy {
    /// Abort the merge with [`MarketDataError::DefectFile`].
    #[default]
    Fail,
    /// Drop the whole file and record it in [`MergedLabels::rejected`].
    Skip,
}

#[derive(Debug, Default)]
pub struct MergedLabels {
    /// Sorted by (stockname, expert, date).
    pub rows: Vec<ExpertLabelRow>,
    /// Every quote seen, from the known store and from label files.
    pub quotes: BTreeMap<String, QuoteSeries>,
    pub rejected: Vec<MarketDataError>,
}

/// Merges label files, dropping exact duplicate rows.
///
/// A file is defective when one of its quotes differs from a quote already
/// known for the same (date, stockname), or when it relabels a data point
/// an already merged file of the same expert labelled differently. Defective
/// files are rejected as a whole.
pub fn merge_label_files(
    files: &[LabelFile],
    known_quotes: &[QuoteSeries],
    policy: DefectPolicy,
) -> Result<MergedLabels> {
    let mut store: BTreeMap<String, BTreeMap<NaiveDate, QuoteBar>> = BTreeMap::new();
    for s in known_quotes {
        let entry = store.entry(s.stockname.clone()).or_default();
        for b in &s.bars {
            entry.insert(b.date, *b);
        }
    }
    let mut labels: BTreeMap<(String, String, NaiveDate), ExpertLabelRow> = BTreeMap::new();
    let mut rejected = Vec::new();

    for file in files {
        if let Err(reason) = check_file(file, &store, &labels) {
            let err = MarketDataError::DefectFile {
                file: file.source.clone(),
                reason,
            };
            match policy {
                DefectPolicy::Fail => return Err(err),
                DefectPolicy::Skip => {
                    log::warn!("{err}");
                    rejected.push(err);
                    continue;
                }
            }
        }
        if let Some(q) = &file.quotes {
            let entry = store.entry(q.stockname.clone()).or_default();
            for b in &q.bars {
                entry.insert(b.date, *b);
            }
        }
        for r in &file.rows {
            labels
                .entry((r.stockname.clone(), r.expert.clone(), r.date))
                .or_insert_with(|| r.clone());
        }
    }

    let quotes = store
        .into_iter()
        .map(|(name, bars)| {
            let series = QuoteSeries {
                stockname: name.clone(),
                bars: bars.into_values().collect(),
            };
            (name, series)
        })
        .collect();
    Ok(MergedLabels {
        rows: labels.into_values().collect(),
        quotes,
        rejected,
    })
}

fn check_file(
    file: &LabelFile,
    store: &BTreeMap<String, BTreeMap<NaiveDate, QuoteBar>>,
    labels: &BTreeMap<(String, String, NaiveDate), ExpertLabelRow>,
) -> std::result::Result<(), String> {
    if let Some(q) = &file.quotes {
        if let Some(known) = store.get(&q.stockname) {
            for b in &q.bars {
                if let Some(k) = known.get(&b.date) {
                    if !k.same_quote(b) {
                        return Err(format!(
                            "quote for {} on {} conflicts with an earlier source (close {} vs {})",
                            q.stockname, b.date, b.close, k.close
                        ));
                    }
                }
            }
        }
    }
    let mut own = BTreeSet::new();
    for r in &file.rows {
        if !own.insert(r.date) {
            return Err(format!("{} labelled twice by {}", r.date, r.expert));
        }
        if let Some(prev) = labels.get(&(r.stockname.clone(), r.expert.clone(), r.date)) {
            if prev != r {
                return Err(format!(
                    "{} on {} already labelled differently by {}",
                    r.stockname, r.date, r.expert
                ));
            }
        }
    }
    Ok(())
}

/// Rows of `rows` grouped by (stockname, expert), each group date-sorted.
pub fn group_by_stock_expert(rows: &[ExpertLabelRow]) -> BTreeMap<(String, String), Vec<ExpertLabelRow>> {
    let mut groups: BTreeMap<(String, String), Vec<ExpertLabelRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.stockname.clone(), r.expert.clone()))
            .or_default()
            .push(r.clone());
    }
    for g in groups.values_mut() {
        g.sort_by_key(|r| r.date);
    }
    groups
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "date,open,high,low,close,volume,stockname\n";

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    #[test]
    fn parses_a_quote_row() {
        let text = format!("{HEADER}2014-10-14,10.0,12.0,9.0,11.0,1000,ACME\n");
        let s = read_quotes(text.as_bytes(), &QuoteSchema::default(), "t").unwrap();
        assert_eq!(s.stockname, "ACME");
        assert_eq!(
            s.bars[0],
            QuoteBar {
                date: d("2014-10-14"),
                open: 10.0,
                high: 12.0,
                low: 9.0,
                close: 11.0,
                volume: 1000.0
            }
        );
    }

    #[test]
    fn rejects_high_below_low() {
        let text = format!("{HEADER}2014-10-14,10.0,9.0,12.0,11.0,1000,ACME\n");
        let err = read_quotes(text.as_bytes(), &QuoteSchema::default(), "t").unwrap_err();
        assert!(matches!(err, MarketDataError::Invariant { .. }), "{err}");
    }

    #[test]
    fn rejects_non_positive_price() {
        let text = format!("{HEADER}2014-10-14,0,12.0,0,11.0,1000,ACME\n");
        let err = read_quotes(text.as_bytes(), &QuoteSchema::default(), "t").unwrap_err();
        assert!(matches!(err, MarketDataError::Invariant { .. }));
    }

    #[test]
    fn rejects_duplicate_dates() {
        let text = format!(
            "{HEADER}2014-10-14,10.0,12.0,9.0,11.0,1000,ACME\n2014-10-14,10.0,12.0,9.0,11.5,1000,ACME\n"
        );
        let err = read_quotes(text.as_bytes(), &QuoteSchema::default(), "t").unwrap_err();
        assert!(matches!(err, MarketDataError::DuplicateDate { .. }));
    }

    #[test]
    fn malformed_cell_is_a_parse_error() {
        let text = format!("{HEADER}2014-10-14,ten,12.0,9.0,11.0,1000,ACME\n");
        let err = read_quotes(text.as_bytes(), &QuoteSchema::default(), "t").unwrap_err();
        match err {
            MarketDataError::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, "open");
            }
            other => panic!("unexpected {other}"),
        }
        let text = format!("{HEADER}14/10/2014,10,12.0,9.0,11.0,1000,ACME\n");
        assert!(matches!(
            read_quotes(text.as_bytes(), &QuoteSchema::default(), "t"),
            Err(MarketDataError::Parse { .. })
        ));
    }

    #[test]
    fn rows_are_sorted_and_schema_is_by_name() {
        let text = "stockname,close,volume,low,high,open,date\n\
                    X,2,1,1,3,2,2020-01-03\nX,1,1,1,1,1,2020-01-02\n";
        let s = read_quotes(text.as_bytes(), &QuoteSchema::default(), "t").unwrap();
        assert_eq!(s.dates(), vec![d("2020-01-02"), d("2020-01-03")]);
    }

    #[test]
    fn missing_column_is_reported() {
        let text = "date,open,high,low,close,stockname\n";
        assert!(matches!(
            read_quotes(text.as_bytes(), &QuoteSchema::default(), "t"),
            Err(MarketDataError::MissingColumn { .. })
        ));
    }

    #[test]
    fn na_type_maps_to_flat() {
        let text = "date,stockname,id_select,type,username\n\
                    2020-01-02,X,1,N/A,D\n2020-01-03,X,1,Trend,D\n";
        let f = read_label_file(text.as_bytes(), "l").unwrap();
        assert_eq!(f.rows[0].tendency, Tendency::Flat);
        assert_eq!(f.rows[1].tendency, Tendency::Trend);
        assert!(f.quotes.is_none());
        let bad = "date,stockname,id_select,type,username\n2020-01-02,X,1,Sideways,D\n";
        assert!(read_label_file(bad.as_bytes(), "l").is_err());
    }

    fn label(date: &str, expert: &str, id: i64) -> ExpertLabelRow {
        ExpertLabelRow {
            date: d(date),
            stockname: "ACME".into(),
            id_select: id,
            tendency: Tendency::Trend,
            expert: expert.into(),
        }
    }

    fn file(source: &str, rows: Vec<ExpertLabelRow>, close: Option<f64>) -> LabelFile {
        let quotes = close.map(|c| {
            QuoteSeries::new(
                "ACME",
                vec![QuoteBar {
                    date: d("2010-01-05"),
                    open: c,
                    high: c,
                    low: c,
                    close: c,
                    volume: 10.0,
                }],
            )
            .unwrap()
        });
        LabelFile {
            source: source.into(),
            rows,
            quotes,
        }
    }

    #[test]
    fn merge_drops_identical_rows() {
        let a = file("a", vec![label("2010-01-05", "D", 1)], None);
        let b = file("b", vec![label("2010-01-05", "D", 1), label("2010-01-06", "D", 1)], None);
        let m = merge_label_files(&[a, b], &[], DefectPolicy::Fail).unwrap();
        assert_eq!(m.rows.len(), 2);
    }

    #[test]
    fn merge_of_disjoint_files_concatenates() {
        let a = file("a", vec![label("2010-01-05", "D", 1)], None);
        let b = file("b", vec![label("2010-01-05", "G", 1)], None);
        let m = merge_label_files(&[a, b], &[], DefectPolicy::Fail).unwrap();
        assert_eq!(m.rows.len(), 2);
    }

    #[test]
    fn conflicting_quote_rejects_file() {
        let a = file("a", vec![label("2010-01-05", "D", 1)], Some(10.0));
        let b = file("b", vec![label("2010-01-05", "G", 1)], Some(10.5));
        let err = merge_label_files(&[a.clone(), b.clone()], &[], DefectPolicy::Fail).unwrap_err();
        assert!(matches!(err, MarketDataError::DefectFile { ref file, .. } if file == "b"));

        let m = merge_label_files(&[a, b], &[], DefectPolicy::Skip).unwrap();
        assert_eq!(m.rows.len(), 1);
        assert_eq!(m.rejected.len(), 1);
        assert_eq!(m.quotes["ACME"].bars[0].close, 10.0);
    }

    #[test]
    fn relabelled_point_rejects_file() {
        let a = file("a", vec![label("2010-01-05", "D", 1)], None);
        let mut r = label("2010-01-05", "D", 1);
        r.tendency = Tendency::Flat;
        let b = file("b", vec![r], None);
        assert!(merge_label_files(&[a, b], &[], DefectPolicy::Fail).is_err());
    }

    #[test]
    fn write_then_read_is_lossless() {
        let s = QuoteSeries::new(
            "ACME",
            vec![QuoteBar {
                date: d("2014-10-14"),
                open: 0.1 + 0.2,
                high: 1.0 / 3.0 + 1.0,
                low: 0.1,
                close: 1.0,
                volume: 12345.678,
            }],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_quotes(&mut buf, &s).unwrap();
        let back = read_quotes(buf.as_slice(), &QuoteSchema::default(), "t").unwrap();
        assert_eq!(back, s);
    }
}
