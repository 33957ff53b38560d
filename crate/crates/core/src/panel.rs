//! Wide CSV panels of market series: loading, validation, calendar joins
//! and context slicing.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt_f64;

pub const STOCK_IDS: [&str; 7] = ["AAPL", "AMZN", "GOOGL", "MSFT", "NFLX", "NVDA", "TSLA"];
pub const RATE_IDS: [&str; 10] = [
    "DGS3MO", "DGS6MO", "DGS1", "DGS2", "DGS3", "DGS5", "DGS7", "DGS10", "DGS20", "DGS30",
];

/// First and last day admitted into the combined panel.
pub fn combined_window() -> (NaiveDate, NaiveDate) {
    (
        NaiveDate::from_ymd_opt(2010, 7, 1).expect("valid date"),
        NaiveDate::from_ymd_opt(2025, 12, 31).expect("valid date"),
    )
}

pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelKind {
    Stocks,
    Rates,
    Combined,
}

impl PanelKind {
    pub const ALL: [PanelKind; 3] = [PanelKind::Stocks, PanelKind::Rates, PanelKind::Combined];

    pub fn name(self) -> &'static str {
        match self {
            PanelKind::Stocks => "stocks",
            PanelKind::Rates => "rates",
            PanelKind::Combined => "combined",
        }
    }

    /// Dataset label used in summary tables.
    pub fn label(self) -> &'static str {
        match self {
            PanelKind::Stocks => "Stocks",
            PanelKind::Rates => "Rates",
            PanelKind::Combined => "Combined",
        }
    }

    pub fn expected_ids(self) -> Vec<&'static str> {
        match self {
            PanelKind::Stocks => STOCK_IDS.to_vec(),
            PanelKind::Rates => RATE_IDS.to_vec(),
            PanelKind::Combined => STOCK_IDS.iter().chain(&RATE_IDS).copied().collect(),
        }
    }
}

impl fmt::Display for PanelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PanelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stocks" => Ok(PanelKind::Stocks),
            "rates" => Ok(PanelKind::Rates),
            "combined" => Ok(PanelKind::Combined),
            _ => Err(Error::Config(format!("unknown panel {s:?}"))),
        }
    }
}

/// How two calendars are joined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Join {
    /// Days on which both markets have a row.
    #[default]
    Intersection,
    /// Every day either market has a row; absent cells are masked.
    Union,
}

/// `K` series on one strictly increasing calendar, in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPanel {
    pub dates: Vec<NaiveDate>,
    pub ids: Vec<String>,
    /// `values[k][t]`; NaN where `mask[k][t]` is false.
    pub values: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
}

/// A slice of a panel: `len` consecutive days for every series.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
}

fn parse_cell(raw: &str, row: usize, id: &str) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() || s == "." {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Data(format!("row {row}, column {id}: cannot parse {s:?}"))),
    }
}

impl SeriesPanel {
    pub fn k(&self) -> usize {
        self.ids.len()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.dates.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!("dates not strictly increasing at {}", w[1])));
        }
        if self.values.len() != self.k() || self.mask.len() != self.k() {
            return Err(Error::Schema("one value and mask row per series is required".into()));
        }
        for (v, m) in self.values.iter().zip(&self.mask) {
            if v.len() != self.len() || m.len() != self.len() {
                return Err(Error::Schema("series length differs from calendar".into()));
            }
        }
        Ok(())
    }

    /// Parses a `date,<id>,...` table and reorders columns to `expected`.
    pub fn from_csv_reader<R: std::io::Read>(reader: R, expected: &[&str]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("date") {
            return Err(Error::Schema(format!(
                "first column must be \"date\", found {:?}",
                header.get(0).unwrap_or("")
            )));
        }
        let cols: Vec<&str> = header.iter().skip(1).collect();
        for c in &cols {
            if !expected.contains(c) {
                return Err(Error::Schema(format!("unknown column {c}")));
            }
        }
        let mut order = Vec::with_capacity(expected.len());
        for id in expected {
            let hits: Vec<usize> = (0..cols.len()).filter(|&i| cols[i] == *id).collect();
            match hits.as_slice() {
                [i] => order.push(*i + 1),
                [] => return Err(Error::Schema(format!("missing column {id}"))),
                _ => return Err(Error::Schema(format!("duplicate column {id}"))),
            }
        }
        let k = expected.len();
        let mut panel = SeriesPanel {
            dates: Vec::new(),
            ids: expected.iter().map(|s| s.to_string()).collect(),
            values: vec![Vec::new(); k],
            mask: vec![Vec::new(); k],
        };
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
            let date = NaiveDate::parse_from_str(&rec[0], DATE_FORMAT)
                .map_err(|_| Error::Data(format!("row {row}: bad date {:?}", &rec[0])))?;
            if let Some(&prev) = panel.dates.last() {
                if date == prev {
                    return Err(Error::Data(format!("row {row}: duplicate date {date}")));
                }
                if date < prev {
                    return Err(Error::Data(format!("row {row}: date {date} precedes {prev}")));
                }
            }
            panel.dates.push(date);
            for (kk, &col) in order.iter().enumerate() {
                let cell = parse_cell(rec.get(col).unwrap_or(""), row, expected[kk])?;
                panel.values[kk].push(cell.unwrap_or(f64::NAN));
                panel.mask[kk].push(cell.is_some());
            }
        }
        Ok(panel)
    }

    pub fn load(path: &Path, expected: &[&str]) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(f, expected).map_err(|e| match e {
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Data(format!("{other:?}")),
        })?;
        let mut head = vec!["date".to_string()];
        head.extend(self.ids.iter().cloned());
        w.write_record(&head)?;
        for t in 0..self.len() {
            let mut rec = vec![self.dates[t].format(DATE_FORMAT).to_string()];
            for k in 0..self.k() {
                rec.push(if self.mask[k][t] {
                    fmt_f64(self.values[k][t])
                } else {
                    String::new()
                });
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Index of the first day on or after `date`.
    pub fn index_of(&self, date: NaiveDate) -> usize {
        self.dates.partition_point(|d| *d < date)
    }

    fn window(&self, start: usize, end: usize) -> Window {
        Window {
            dates: self.dates[start..end].to_vec(),
            values: self.values.iter().map(|v| v[start..end].to_vec()).collect(),
            mask: self.mask.iter().map(|m| m[start..end].to_vec()).collect(),
        }
    }

    /// The `n` days strictly before `origin`, or `None` when fewer exist.
    pub fn slice_context(&self, origin: NaiveDate, n: usize) -> Option<Window> {
        let end = self.index_of(origin);
        (end >= n).then(|| self.window(end - n, end))
    }

    /// The `m` days starting on the first day at or after `origin`, or
    /// `None` when fewer remain.
    pub fn slice_future(&self, origin: NaiveDate, m: usize) -> Option<Window> {
        let start = self.index_of(origin);
        (start + m <= self.len()).then(|| self.window(start, start + m))
    }

    pub fn summary(&self) -> PanelSummary {
        PanelSummary {
            k: self.k(),
            t: self.len(),
            first: self.dates.first().copied(),
            last: self.dates.last().copied(),
            missing: self
                .ids
                .iter()
                .zip(&self.mask)
                .map(|(id, m)| (id.clone(), m.iter().filter(|x| !**x).count()))
                .collect(),
        }
    }
}

/// Shape and completeness of a panel.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelSummary {
    pub k: usize,
    pub t: usize,
    pub first: Option<NaiveDate>,
    pub last: Option<NaiveDate>,
    pub missing: Vec<(String, usize)>,
}

impl fmt::Display for PanelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let span = match (self.first, self.last) {
            (Some(a), Some(b)) => format!("{a} .. {b}"),
            _ => "empty".into(),
        };
        writeln!(f, "K = {}, T = {}, span {span}", self.k, self.t)?;
        for (id, n) in &self.missing {
            writeln!(f, "  {id:<8} missing {n}")?;
        }
        Ok(())
    }
}

/// Joins stock and rate panels on their calendars within the combined
/// study window. Stocks come first in the series order.
pub fn build_combined(stocks: &SeriesPanel, rates: &SeriesPanel, join: Join) -> Result<SeriesPanel> {
    let (lo, hi) = combined_window();
    let in_window = |d: &NaiveDate| *d >= lo && *d <= hi;
    let mut dates: Vec<NaiveDate> = match join {
        Join::Intersection => stocks
            .dates
            .iter()
            .filter(|d| rates.dates.binary_search(d).is_ok())
            .copied()
            .collect(),
        Join::Union => {
            let mut all: Vec<NaiveDate> = stocks.dates.iter().chain(&rates.dates).copied().collect();
            all.sort_unstable();
            all.dedup();
            all
        }
    };
    dates.retain(in_window);
    if dates.is_empty() {
        return Err(Error::Data(
            "stock and rate calendars share no day inside the combined window".into(),
        ));
    }
    let mut out = SeriesPanel {
        ids: stocks.ids.iter().chain(&rates.ids).cloned().collect(),
        values: Vec::new(),
        mask: Vec::new(),
        dates,
    };
    for src in [stocks, rates] {
        let pos: Vec<Option<usize>> = out.dates.iter().map(|d| src.dates.binary_search(d).ok()).collect();
        for k in 0..src.k() {
            out.values.push(
                pos.iter()
                    .map(|p| p.map_or(f64::NAN, |i| src.values[k][i]))
                    .collect(),
            );
            out.mask.push(pos.iter().map(|p| p.is_some_and(|i| src.mask[k][i])).collect());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn parse(text: &str, ids: &[&str]) -> Result<SeriesPanel> {
        SeriesPanel::from_csv_reader(text.as_bytes(), ids)
    }

    #[test]
    fn blank_cell_is_the_only_masked_value() {
        let p = parse("date,A,B\n2020-01-02,1.5,\n2020-01-03,2,3\n", &["A", "B"]).unwrap();
        let zeros = p.mask.iter().flatten().filter(|m| !**m).count();
        assert_eq!(zeros, 1);
        assert!(!p.mask[1][0]);
        assert_eq!(p.values[0], vec![1.5, 2.0]);
    }

    #[test]
    fn columns_are_reordered_to_expectation() {
        let p = parse("date,B,A\n2020-01-02,1,2\n", &["A", "B"]).unwrap();
        assert_eq!(p.ids, ["A", "B"]);
        assert_eq!(p.values[0], vec![2.0]);
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(parse("date,A,C\n", &["A", "B"]), Err(Error::Schema(_))));
        assert!(matches!(parse("date,A\n", &["A", "B"]), Err(Error::Schema(_))));
        assert!(matches!(parse("day,A,B\n", &["A", "B"]), Err(Error::Schema(_))));
        assert!(matches!(parse("date,A,A,B\n", &["A", "B"]), Err(Error::Schema(_))));
    }

    #[test]
    fn data_errors_name_the_row() {
        let dup = parse("date,A\n2020-01-02,1\n2020-01-02,2\n", &["A"]);
        assert!(matches!(dup, Err(Error::Data(m)) if m.contains("row 2")));
        let back = parse("date,A\n2020-01-03,1\n2020-01-02,2\n", &["A"]);
        assert!(matches!(back, Err(Error::Data(_))));
        let junk = parse("date,A\n2020-01-02,1\n2020-01-03,x1\n", &["A"]);
        assert!(matches!(junk, Err(Error::Data(m)) if m.contains("row 2") && m.contains("A")));
        let date = parse("date,A\n02/01/2020,1\n", &["A"]);
        assert!(matches!(date, Err(Error::Data(_))));
    }

    #[test]
    fn fred_dot_means_missing() {
        let p = parse("date,A\n2020-01-02,.\n", &["A"]).unwrap();
        assert!(!p.mask[0][0]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = parse(
            "date,A,B\n2020-01-02,0.1,\n2020-01-03,3.3333333333333335,-7e-300\n",
            &["A", "B"],
        )
        .unwrap();
        let path = dir.path().join("p.csv");
        p.save(&path).unwrap();
        let q = SeriesPanel::load(&path, &["A", "B"]).unwrap();
        assert_eq!(p.dates, q.dates);
        assert_eq!(p.mask, q.mask);
        for (a, b) in p.values.iter().flatten().zip(q.values.iter().flatten()) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }

    fn daily(ids: &[&str], start: NaiveDate, days: usize, base: f64) -> SeriesPanel {
        let dates: Vec<_> = (0..days as u64)
            .map(|i| start.checked_add_days(chrono::Days::new(i)).unwrap())
            .collect();
        SeriesPanel {
            ids: ids.iter().map(|s| s.to_string()).collect(),
            values: (0..ids.len())
                .map(|k| (0..days).map(|t| base + (k * 1000 + t) as f64).collect())
                .collect(),
            mask: vec![vec![true; days]; ids.len()],
            dates,
        }
    }

    #[test]
    fn combined_respects_window_and_values() {
        let s = daily(&["S"], d(2010, 6, 1), 100, 0.0);
        let r = daily(&["R1", "R2"], d(2010, 6, 1), 100, 0.5);
        let c = build_combined(&s, &r, Join::Intersection).unwrap();
        assert_eq!(c.k(), 3);
        assert_eq!(c.dates[0], d(2010, 7, 1));
        assert_eq!(c.len(), 100 - 30);
        let i = s.index_of(c.dates[5]);
        assert_eq!(c.values[0][5], s.values[0][i]);
        assert_eq!(c.values[2][5], r.values[1][i]);
    }

    #[test]
    fn identical_calendars_keep_full_length() {
        let s = daily(&["S"], d(2012, 1, 1), 50, 0.0);
        let r = daily(&["R"], d(2012, 1, 1), 50, 0.0);
        assert_eq!(build_combined(&s, &r, Join::Intersection).unwrap().len(), 50);
    }

    #[test]
    fn disjoint_calendars_fail() {
        let s = daily(&["S"], d(2012, 1, 1), 10, 0.0);
        let r = daily(&["R"], d(2013, 1, 1), 10, 0.0);
        assert!(matches!(build_combined(&s, &r, Join::Intersection), Err(Error::Data(_))));
        let u = build_combined(&s, &r, Join::Union).unwrap();
        assert_eq!(u.len(), 20);
        assert_eq!(u.mask[0].iter().filter(|m| **m).count(), 10);
    }

    #[test]
    fn context_slices_stop_before_origin() {
        let p = daily(&["A"], d(2020, 1, 1), 400, 0.0);
        let origin = d(2020, 6, 1);
        let w = p.slice_context(origin, 126).unwrap();
        assert_eq!(w.dates.len(), 126);
        assert!(*w.dates.last().unwrap() < origin);
        assert_eq!(w.dates.last().unwrap().succ_opt().unwrap(), origin);
        assert!(p.slice_context(d(2020, 2, 1), 126).is_none());
        let f = p.slice_future(origin, 21).unwrap();
        assert_eq!(f.dates[0], origin);
        assert!(p.slice_future(d(2021, 1, 30), 21).is_none());
    }

    #[test]
    fn kinds_parse_and_list_ids() {
        assert_eq!("Rates".parse::<PanelKind>().unwrap(), PanelKind::Rates);
        assert_eq!(PanelKind::Combined.expected_ids().len(), 17);
        assert!("bonds".parse::<PanelKind>().is_err());
    }
}
