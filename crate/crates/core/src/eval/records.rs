use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::model::Mode;
use crate::panel::{PanelKind, DATE_FORMAT};

pub const RECORDS_HEADER: &str = "panel,mode,series,n,m,origin,rmse,mape,skipped,regime";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Regime {
    Pre,
    Post,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Pre => "pre",
            Regime::Post => "post",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre" => Ok(Regime::Pre),
            "post" => Ok(Regime::Post),
            _ => Err(Error::Data(format!("unknown regime {s:?}"))),
        }
    }
}

/// Accuracy of one series' point forecast at one origin.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub panel: PanelKind,
    pub mode: Mode,
    pub series: String,
    pub n: usize,
    pub m: usize,
    pub origin: NaiveDate,
    /// Original units.
    pub rmse: f64,
    /// Ratio, not percent.
    pub mape: f64,
    /// Cells left out of MAPE because the actual was near zero.
    pub skipped: usize,
    pub regime: Regime,
}

impl EvalRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.panel,
            self.mode,
            self.series,
            self.n,
            self.m,
            self.origin.format(DATE_FORMAT),
            fmt_f64(self.rmse),
            fmt_f64(self.mape),
            self.skipped,
            self.regime
        )
    }

    fn parse(line: &str, row: usize) -> Result<Self> {
        let bad = |what: &str| Error::Data(format!("records row {row}: bad {what}"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::Data(format!(
                "records row {row}: expected 10 fields, found {}",
                f.len()
            )));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| bad(what))
        };
        Ok(Self {
            panel: f[0].parse().map_err(|_| bad("panel"))?,
            mode: f[1].parse().map_err(|_| bad("mode"))?,
            series: if f[2].is_empty() {
                return Err(bad("series"));
            } else {
                f[2].to_string()
            },
            n: f[3].parse().map_err(|_| bad("n"))?,
            m: f[4].parse().map_err(|_| bad("m"))?,
            origin: NaiveDate::parse_from_str(f[5], DATE_FORMAT).map_err(|_| bad("origin"))?,
            rmse: num(f[6], "rmse")?,
            mape: num(f[7], "mape")?,
            skipped: f[8].parse().map_err(|_| bad("skipped"))?,
            regime: f[9].parse().map_err(|_| bad("regime"))?,
        })
    }
}

/// Append-only records file; the header is written on creation.
pub struct RecordWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl RecordWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(f);
        writeln!(out, "{RECORDS_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
        })
    }

    pub fn append(&mut self, records: &[EvalRecord]) -> Result<()> {
        for r in records {
            writeln!(self.out, "{}", r.to_line()).map_err(|e| Error::io(&self.path, e))?;
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<()> {
    RecordWriter::create(path)?.append(records)
}

pub fn parse_records(text: &str) -> Result<Vec<EvalRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == RECORDS_HEADER => {}
        Some(h) => return Err(Error::Data(format!("records header {h:?} is not {RECORDS_HEADER:?}"))),
        None => return Err(Error::Data("records file is empty".into())),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| EvalRecord::parse(l.trim_end(), i + 1))
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text)
}
