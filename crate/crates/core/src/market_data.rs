//! Monthly two-asset return history: loading, validation and the train/test split.
//!
//! Returns are monthly *simple* returns (a value of `0.01` means +1%). Every
//! series is validated on construction: equal column lengths, consecutive
//! calendar months and returns strictly above `-1`.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("row {row}: {msg}")]
    BadRow { row: usize, msg: String },
    #[error("non-consecutive months: {prev} followed by {next}")]
    NonConsecutive { prev: YearMonth, next: YearMonth },
    #[error("return {value} at {month} is <= -1")]
    ReturnFloor { month: YearMonth, value: f64 },
    #[error("series is empty")]
    Empty,
    #[error("column lengths differ ({months} months, {bonds} bond, {stocks} stock)")]
    LengthMismatch {
        months: usize,
        bonds: usize,
        stocks: usize,
    },
    #[error("split boundary {boundary} outside series range {first}..={last}")]
    BoundaryOutOfRange {
        boundary: YearMonth,
        first: YearMonth,
        last: YearMonth,
    },
    #[error("invalid month `{0}`")]
    BadMonth(String),
}

/// Calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self, DataError> {
        if !(1..=12).contains(&month) {
            return Err(DataError::BadMonth(format!("{year}-{month}")));
        }
        Ok(Self { year, month })
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            Self {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Self {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    /// Months elapsed since year 0, used for ordinal arithmetic.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = DataError;

    /// Accepts `YYYY-MM`, `YYYY-MM-DD`, `YYYY/MM` and the decimal `YYYY.MM`
    /// convention where a single fractional digit `1` means October
    /// (`1871.1`), as written by spreadsheet exports of monthly data.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DataError::BadMonth(s.to_string());
        let t = s.trim();
        let (y, m) = if let Some((y, rest)) = t.split_once('-') {
            (y, rest.split('-').next().ok_or_else(bad)?)
        } else if let Some((y, m)) = t.split_once('/') {
            (y, m)
        } else if let Some((y, m)) = t.split_once('.') {
            (y, m)
        } else {
            return Err(bad());
        };
        let year: i32 = y.parse().map_err(|_| bad())?;
        let month: u8 = if t.contains('.') && m.len() == 1 {
            let d: u8 = m.parse().map_err(|_| bad())?;
            if d == 1 {
                10
            } else {
                d
            }
        } else {
            m.parse().map_err(|_| bad())?
        };
        YearMonth::new(year, month).map_err(|_| bad())
    }
}

/// Aligned monthly bond/stock simple returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    months: Vec<YearMonth>,
    bond: Vec<f64>,
    stock: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(months: Vec<YearMonth>, bond: Vec<f64>, stock: Vec<f64>) -> Result<Self, DataError> {
        if months.len() != bond.len() || months.len() != stock.len() {
            return Err(DataError::LengthMismatch {
                months: months.len(),
                bonds: bond.len(),
                stocks: stock.len(),
            });
        }
        if months.is_empty() {
            return Err(DataError::Empty);
        }
        for w in months.windows(2) {
            if w[1] != w[0].succ() {
                return Err(DataError::NonConsecutive {
                    prev: w[0],
                    next: w[1],
                });
            }
        }
        for (i, m) in months.iter().enumerate() {
            for v in [bond[i], stock[i]] {
                if !v.is_finite() || v <= -1.0 {
                    return Err(DataError::ReturnFloor { month: *m, value: v });
                }
            }
        }
        Ok(Self {
            months,
            bond,
            stock,
        })
    }

    /// Builds a series of consecutive months starting at `start`.
    pub fn from_returns(start: YearMonth, bond: Vec<f64>, stock: Vec<f64>) -> Result<Self, DataError> {
        let mut months = Vec::with_capacity(bond.len());
        let mut m = start;
        for _ in 0..bond.len() {
            months.push(m);
            m = m.succ();
        }
        Self::new(months, bond, stock)
    }

    pub fn len(&self) -> usize {
        self.months.len()
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }

    pub fn months(&self) -> &[YearMonth] {
        &self.months
    }

    pub fn bond(&self) -> &[f64] {
        &self.bond
    }

    pub fn stock(&self) -> &[f64] {
        &self.stock
    }

    pub fn first_month(&self) -> YearMonth {
        self.months[0]
    }

    pub fn last_month(&self) -> YearMonth {
        self.months[self.months.len() - 1]
    }

    /// Row `i` as `[bond, stock]`.
    pub fn row(&self, i: usize) -> [f64; 2] {
        [self.bond[i], self.stock[i]]
    }

    /// Contiguous sub-series `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> ReturnSeries {
        ReturnSeries {
            months: self.months[start..end].to_vec(),
            bond: self.bond[start..end].to_vec(),
            stock: self.stock[start..end].to_vec(),
        }
    }

    /// Writes the canonical `year,month,bond_return,stock_return` CSV.
    ///
    /// Floats use the shortest representation that parses back to the same
    /// bits, so [`load_canonical`] round-trips exactly.
    pub fn save_canonical(&self, path: &Path) -> Result<(), DataError> {
        let mut f = File::create(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut out = String::with_capacity(self.len() * 48);
        out.push_str("year,month,bond_return,stock_return\n");
        for i in 0..self.len() {
            let m = self.months[i];
            out.push_str(&format!("{},{},{:?},{:?}\n", m.year, m.month, self.bond[i], self.stock[i]));
        }
        f.write_all(out.as_bytes()).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Column names for [`load_returns`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub date: String,
    pub bond: String,
    pub stock: String,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            date: "date".into(),
            bond: "bond_return".into(),
            stock: "stock_return".into(),
        }
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>, DataError> {
    let f = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f))
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn parse_return(rec: &csv::StringRecord, idx: usize, row: usize, name: &str) -> Result<f64, DataError> {
    let raw = rec.get(idx).unwrap_or("");
    if raw.is_empty() {
        return Err(DataError::BadRow {
            row,
            msg: format!("missing value in `{name}`"),
        });
    }
    raw.parse::<f64>().map_err(|_| DataError::BadRow {
        row,
        msg: format!("unparseable `{name}` value `{raw}`"),
    })
}

fn assemble(mut rows: Vec<(YearMonth, f64, f64)>) -> Result<ReturnSeries, DataError> {
    rows.sort_by_key(|r| r.0);
    let months = rows.iter().map(|r| r.0).collect();
    let bond = rows.iter().map(|r| r.1).collect();
    let stock = rows.iter().map(|r| r.2).collect();
    ReturnSeries::new(months, bond, stock)
}

/// Loads a delimited file with a header row containing a date column and
/// two return columns. Rows are sorted chronologically before validation.
/// Row numbers in errors are 1-based data rows (the header is row 0).
pub fn load_returns(path: &Path, cols: &ColumnSpec) -> Result<ReturnSeries, DataError> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers()?.clone();
    let (di, bi, si) = (
        column(&headers, &cols.date)?,
        column(&headers, &cols.bond)?,
        column(&headers, &cols.stock)?,
    );
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let month: YearMonth = rec
            .get(di)
            .unwrap_or("")
            .parse()
            .map_err(|e: DataError| DataError::BadRow { row, msg: e.to_string() })?;
        let b = parse_return(&rec, bi, row, &cols.bond)?;
        let s = parse_return(&rec, si, row, &cols.stock)?;
        rows.push((month, b, s));
    }
    assemble(rows)
}

/// Loads the canonical `year,month,bond_return,stock_return` format.
pub fn load_canonical(path: &Path) -> Result<ReturnSeries, DataError> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers()?.clone();
    let (yi, mi, bi, si) = (
        column(&headers, "year")?,
        column(&headers, "month")?,
        column(&headers, "bond_return")?,
        column(&headers, "stock_return")?,
    );
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let bad = |msg: &str| DataError::BadRow { row, msg: msg.to_string() };
        let year: i32 = rec.get(yi).unwrap_or("").parse().map_err(|_| bad("bad year"))?;
        let month: u8 = rec.get(mi).unwrap_or("").parse().map_err(|_| bad("bad month"))?;
        let ym = YearMonth::new(year, month).map_err(|_| bad("bad month"))?;
        rows.push((ym, parse_return(&rec, bi, row, "bond_return")?, parse_return(&rec, si, row, "stock_return")?));
    }
    assemble(rows)
}

/// Splits into months `< boundary` and months `>= boundary`.
pub fn split_train_test(
    series: &ReturnSeries,
    boundary: YearMonth,
) -> Result<(ReturnSeries, ReturnSeries), DataError> {
    let (first, last) = (series.first_month(), series.last_month());
    if boundary <= first || boundary > last {
        return Err(DataError::BoundaryOutOfRange { boundary, first, last });
    }
    let cut = (boundary.ordinal() - first.ordinal()) as usize;
    Ok((series.slice(0, cut), series.slice(cut, series.len())))
}
