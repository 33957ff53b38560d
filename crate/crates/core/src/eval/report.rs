//! Summaries of evaluation records and the CSV artifacts built from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::warn;

use super::records::EvalRecord;
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::model::Mode;
use crate::panel::PanelKind;

/// Default context lengths and horizons; artifact grids always show these
/// rows and columns, plus any other value found in the records.
pub const GRID_NS: [usize; 4] = [126, 252, 504, 756];
pub const GRID_MS: [usize; 2] = [21, 63];

/// Mean and sample standard deviation (divisor N−1; 0 when N = 1). The
/// mean is accumulated relative to the first value, so identical inputs
/// give their own value and a deviation of exactly 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let x0 = xs[0];
    let mean = x0 + xs.iter().map(|x| x - x0).sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeSummary {
    pub panel: PanelKind,
    pub mode: Mode,
    pub count: usize,
    pub mape_mean: f64,
    pub mape_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    /// Only one record, so the deviation is 0 by convention.
    pub single: bool,
}

/// Per (panel, mode) mean and sample deviation of MAPE and RMSE.
pub fn aggregate_mode(records: &[EvalRecord]) -> Vec<ModeSummary> {
    let mut groups: BTreeMap<(PanelKind, Mode), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let g = groups.entry((r.panel, r.mode)).or_default();
        g.0.push(r.mape);
        g.1.push(r.rmse);
    }
    groups
        .into_iter()
        .map(|((panel, mode), (mapes, rmses))| {
            let (mape_mean, mape_std) = mean_std(&mapes);
            let (rmse_mean, rmse_std) = mean_std(&rmses);
            ModeSummary {
                panel,
                mode,
                count: mapes.len(),
                mape_mean,
                mape_std,
                rmse_mean,
                rmse_std,
                single: mapes.len() == 1,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesComparison {
    pub panel: PanelKind,
    pub series: String,
    pub mape_mv: f64,
    pub mape_uv: f64,
    pub rmse_mv: f64,
    pub rmse_uv: f64,
}

impl SeriesComparison {
    /// Mean UV error minus mean MV error; positive when MV is better.
    pub fn mape_improvement(&self) -> f64 {
        self.mape_uv - self.mape_mv
    }

    pub fn rmse_improvement(&self) -> f64 {
        self.rmse_uv - self.rmse_mv
    }
}

/// Per-series mean errors under both modes. Series lacking either mode
/// are left out and reported in the returned warnings.
pub fn compare_series(records: &[EvalRecord]) -> (Vec<SeriesComparison>, Vec<String>) {
    type Sums = [(f64, usize); 4];
    let mut order: Vec<(PanelKind, String)> = Vec::new();
    let mut acc: BTreeMap<(PanelKind, String), Sums> = BTreeMap::new();
    for r in records {
        let key = (r.panel, r.series.clone());
        let e = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            [(0.0, 0); 4]
        });
        let base = if r.mode == Mode::Mv { 0 } else { 2 };
        e[base].0 += r.mape;
        e[base].1 += 1;
        e[base + 1].0 += r.rmse;
        e[base + 1].1 += 1;
    }
    order.sort_by_key(|(p, _)| *p);
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for key in order {
        let s = acc[&key];
        if s[0].1 == 0 || s[2].1 == 0 {
            let have = if s[0].1 == 0 { "UV" } else { "MV" };
            warnings.push(format!(
                "{} {} has only {have} records; improvements omitted",
                key.0, key.1
            ));
            continue;
        }
        let mean = |i: usize| s[i].0 / s[i].1 as f64;
        out.push(SeriesComparison {
            panel: key.0,
            series: key.1,
            mape_mv: mean(0),
            rmse_mv: mean(1),
            mape_uv: mean(2),
            rmse_uv: mean(3),
        });
    }
    (out, warnings)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeReport {
    pub cutoff: NaiveDate,
    pub pre_count: usize,
    pub post_count: usize,
    /// `None` when no origin falls on that side.
    pub pre: Option<Vec<ModeSummary>>,
    pub post: Option<Vec<ModeSummary>>,
}

/// Splits records at `cutoff` (origin before it ⇒ pre) and summarizes each side.
pub fn regime_report(records: &[EvalRecord], cutoff: NaiveDate) -> RegimeReport {
    let (pre, post): (Vec<EvalRecord>, Vec<EvalRecord>) =
        records.iter().cloned().partition(|r| r.origin < cutoff);
    let side = |v: &[EvalRecord]| (!v.is_empty()).then(|| aggregate_mode(v));
    RegimeReport {
        cutoff,
        pre_count: pre.len(),
        post_count: post.len(),
        pre: side(&pre),
        post: side(&post),
    }
}

fn axis(defaults: &[usize], found: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = defaults.iter().copied().chain(found).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

const HEAT_MODES: [Mode; 2] = [Mode::Mv, Mode::Uv];

fn heat_header(ms: &[usize]) -> String {
    HEAT_MODES
        .iter()
        .flat_map(|mode| ms.iter().map(move |m| format!("{mode}_m{m}")))
        .collect::<Vec<_>>()
        .join(",")
}

fn heat_cells<'a>(records: impl Iterator<Item = &'a EvalRecord> + Clone, n: usize, ms: &[usize]) -> String {
    HEAT_MODES
        .iter()
        .flat_map(|&mode| {
            let recs = records.clone();
            ms.iter().map(move |&m| {
                opt(mean_of(
                    recs.clone()
                        .filter(|r| r.mode == mode && r.n == n && r.m == m)
                        .map(|r| r.mape),
                ))
            })
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Mean MAPE with rows `n` and columns mode × m, pooled over panels.
pub fn heatmap_csv(records: &[EvalRecord]) -> String {
    let ns = axis(&GRID_NS, records.iter().map(|r| r.n));
    let ms = axis(&GRID_MS, records.iter().map(|r| r.m));
    let mut s = format!("n,{}\n", heat_header(&ms));
    for &n in &ns {
        let _ = writeln!(s, "{n},{}", heat_cells(records.iter(), n, &ms));
    }
    s
}

/// The heatmap repeated for each panel present.
pub fn heatmap_by_panel_csv(records: &[EvalRecord]) -> String {
    let ns = axis(&GRID_NS, records.iter().map(|r| r.n));
    let ms = axis(&GRID_MS, records.iter().map(|r| r.m));
    let mut s = format!("panel,n,{}\n", heat_header(&ms));
    for p in PanelKind::ALL {
        if !records.iter().any(|r| r.panel == p) {
            continue;
        }
        for &n in &ns {
            let recs = records.iter().filter(|r| r.panel == p);
            let _ = writeln!(s, "{p},{n},{}", heat_cells(recs, n, &ms));
        }
    }
    s
}

/// Mean MAPE per origin month with one column per panel × mode.
pub fn timeseries_csv(records: &[EvalRecord]) -> String {
    let cols: Vec<(PanelKind, Mode)> = PanelKind::ALL
        .iter()
        .flat_map(|&p| HEAT_MODES.iter().map(move |&m| (p, m)))
        .collect();
    let mut s = String::from("month");
    for (p, m) in &cols {
        let _ = write!(s, ",{p}_{m}");
    }
    s.push('\n');
    let mut by_month: BTreeMap<String, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by_month.entry(r.origin.format("%Y-%m").to_string()).or_default().push(r);
    }
    for (month, recs) in by_month {
        s.push_str(&month);
        for &(p, m) in &cols {
            let v = mean_of(recs.iter().filter(|r| r.panel == p && r.mode == m).map(|r| r.mape));
            let _ = write!(s, ",{}", opt(v));
        }
        s.push('\n');
    }
    s
}

const SUMMARY_COLS: &str = "count,mape_mean,mape_std,rmse_mean,rmse_std";

fn summary_cells(m: &ModeSummary) -> String {
    format!(
        "{},{},{},{},{}",
        m.count,
        fmt_f64(m.mape_mean),
        fmt_f64(m.mape_std),
        fmt_f64(m.rmse_mean),
        fmt_f64(m.rmse_std)
    )
}

pub fn table1_csv(summary: &[ModeSummary]) -> String {
    let mut s = format!("dataset,mode,{SUMMARY_COLS},single_record\n");
    for m in summary {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            m.panel.label(),
            m.mode,
            summary_cells(m),
            u8::from(m.single)
        );
    }
    s
}

pub fn regime_csv(report: &RegimeReport) -> String {
    let mut s = format!("regime,dataset,mode,{SUMMARY_COLS}\n");
    for (tag, side) in [("pre", &report.pre), ("post", &report.post)] {
        for m in side.iter().flatten() {
            let _ = writeln!(s, "{tag},{},{},{}", m.panel.label(), m.mode, summary_cells(m));
        }
    }
    s
}

const COMPARE_HEADER: &str =
    "dataset,series,mape_mv,mape_uv,rmse_mv,rmse_uv,mape_improvement,rmse_improvement";

fn compare_rows(s: &mut String, rows: &[SeriesComparison]) {
    for c in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            c.panel.label(),
            c.series,
            fmt_f64(c.mape_mv),
            fmt_f64(c.mape_uv),
            fmt_f64(c.rmse_mv),
            fmt_f64(c.rmse_uv),
            fmt_f64(c.mape_improvement()),
            fmt_f64(c.rmse_improvement())
        );
    }
}

/// Per-series comparison for the single-market panels.
pub fn table2_csv(rows: &[SeriesComparison]) -> String {
    let mut s = format!("{COMPARE_HEADER}\n");
    let single: Vec<_> = rows.iter().filter(|c| c.panel != PanelKind::Combined).cloned().collect();
    compare_rows(&mut s, &single);
    s
}

/// Combined-panel comparison, followed by the single-market rows
/// recomputed over the combined panel's origin span so both sets of
/// numbers cover the same months.
pub fn table3_csv(records: &[EvalRecord]) -> (String, Vec<String>) {
    let mut s = format!("{COMPARE_HEADER}\n");
    let combined: Vec<EvalRecord> = records
        .iter()
        .filter(|r| r.panel == PanelKind::Combined)
        .cloned()
        .collect();
    let (Some(lo), Some(hi)) = (
        combined.iter().map(|r| r.origin).min(),
        combined.iter().map(|r| r.origin).max(),
    ) else {
        return (s, Vec::new());
    };
    let (rows, mut warnings) = compare_series(&combined);
    compare_rows(&mut s, &rows);
    let span: Vec<EvalRecord> = records
        .iter()
        .filter(|r| r.panel != PanelKind::Combined && r.origin >= lo && r.origin <= hi)
        .cloned()
        .collect();
    let (rows, w) = compare_series(&span);
    warnings.extend(w);
    compare_rows(&mut s, &rows);
    (s, warnings)
}

/// Paths written by [`emit_artifacts`], in write order.
pub const ARTIFACT_FILES: [&str; 7] = [
    "heatmap.csv",
    "heatmap_by_panel.csv",
    "timeseries.csv",
    "regime.csv",
    "table1.csv",
    "table2.csv",
    "table3.csv",
];

/// Everything derived from a record set.
#[derive(Clone, Debug)]
pub struct Report {
    pub summary: Vec<ModeSummary>,
    pub comparison: Vec<SeriesComparison>,
    pub regime: RegimeReport,
    pub warnings: Vec<String>,
    pub files: Vec<(String, String)>,
}

/// Builds every artifact in memory.
pub fn build_report(records: &[EvalRecord], cutoff: NaiveDate) -> Report {
    let summary = aggregate_mode(records);
    let (comparison, mut warnings) = compare_series(records);
    let regime = regime_report(records, cutoff);
    let (t3, w3) = table3_csv(records);
    warnings.extend(w3);
    let contents = [
        heatmap_csv(records),
        heatmap_by_panel_csv(records),
        timeseries_csv(records),
        regime_csv(&regime),
        table1_csv(&summary),
        table2_csv(&comparison),
        t3,
    ];
    let files = ARTIFACT_FILES
        .iter()
        .map(|s| s.to_string())
        .zip(contents)
        .collect();
    Report {
        summary,
        comparison,
        regime,
        warnings,
        files,
    }
}

/// Writes every artifact into `dir` (created if needed).
pub fn emit_artifacts(records: &[EvalRecord], cutoff: NaiveDate, dir: &Path) -> Result<Report> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report = build_report(records, cutoff);
    for (name, body) in &report.files {
        let p: PathBuf = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    for w in &report.warnings {
        warn!("{w}");
    }
    Ok(report)
}
