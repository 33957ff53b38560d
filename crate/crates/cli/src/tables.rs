//! Fixed-width renderings of the summary tables for standard output.

use std::fmt::Write;

use groupcast::eval::report::{ModeSummary, RegimeReport, SeriesComparison};
use groupcast::eval::Skip;
use groupcast::panel::PanelKind;

pub fn mode_table(title: &str, rows: &[ModeSummary]) -> String {
    let mut s = format!("{title}\n");
    let _ = writeln!(
        s,
        "{:<10} {:<4} {:>7} {:>12} {:>12} {:>12} {:>12}",
        "dataset", "mode", "count", "MAPE mean", "MAPE std", "RMSE mean", "RMSE std"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:<4} {:>7} {:>12.6} {:>12.6} {:>12.6} {:>12.6}{}",
            r.panel.label(),
            r.mode,
            r.count,
            r.mape_mean,
            r.mape_std,
            r.rmse_mean,
            r.rmse_std,
            if r.single { "  (N=1)" } else { "" }
        );
    }
    if rows.is_empty() {
        s.push_str("(no records)\n");
    }
    s
}

pub fn series_table(rows: &[SeriesComparison]) -> String {
    let mut s = String::from("Per-series comparison (improvement = UV - MV)\n");
    let _ = writeln!(
        s,
        "{:<10} {:<8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "dataset", "series", "MAPE MV", "MAPE UV", "RMSE MV", "RMSE UV", "dMAPE", "dRMSE"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:<8} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            r.panel.label(),
            r.series,
            r.mape_mv,
            r.mape_uv,
            r.rmse_mv,
            r.rmse_uv,
            r.mape_improvement(),
            r.rmse_improvement()
        );
    }
    if rows.is_empty() {
        s.push_str("(no series with both modes)\n");
    }
    s
}

pub fn regime_line(r: &RegimeReport) -> String {
    format!(
        "Regime split at {}: {} pre, {} post\n",
        r.cutoff, r.pre_count, r.post_count
    )
}

pub fn skip_line(skips: &[Skip]) -> String {
    if skips.is_empty() {
        return String::new();
    }
    format!("{} series forecasts skipped (see debug log)\n", skips.len())
}

/// Grid plan rows: panel, n, m, origin count, first and last origin.
pub type PlanRow = (PanelKind, usize, usize, usize, String, String);

pub fn plan_table(rows: &[PlanRow], modes: usize, cells: usize, forecasts: usize) -> String {
    let mut s = String::from("Grid plan\n");
    let _ = writeln!(
        s,
        "{:<9} {:>5} {:>4} {:>8} {:>11} {:>11}",
        "panel", "n", "m", "origins", "first", "last"
    );
    for (p, n, m, count, first, last) in rows {
        let _ = writeln!(s, "{:<9} {n:>5} {m:>4} {count:>8} {first:>11} {last:>11}", p.name());
    }
    let _ = writeln!(
        s,
        "{modes} modes, {cells} grid cells, {forecasts} series forecasts"
    );
    s
}

pub fn plan_csv(rows: &[PlanRow]) -> String {
    let mut s = String::from("panel,n,m,origins,first,last\n");
    for (p, n, m, count, first, last) in rows {
        let _ = writeln!(s, "{p},{n},{m},{count},{first},{last}");
    }
    s
}
