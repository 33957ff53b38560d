use std::collections::BTreeMap;

use chrono::NaiveDate;
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::metrics::{mape, rmse};
use super::origins::{rolling_origins, WARMUP_MONTHS};
use super::records::{EvalRecord, Regime};
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::panel::{PanelKind, SeriesPanel, Window};
use crate::par;

/// The experiment grid: every combination of panel, mode, `n` and `m` is
/// run at every admissible monthly origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub panels: Vec<PanelKind>,
    pub modes: Vec<Mode>,
    /// Context lengths in trading days.
    pub ns: Vec<usize>,
    /// Horizons in trading days.
    pub ms: Vec<usize>,
    /// Origins before this day are tagged `pre`, the rest `post`.
    pub cutoff: NaiveDate,
    /// Quantile level used as the point forecast.
    pub point_quantile: f64,
    /// Months between the panel's first month and the first origin.
    pub warmup_months: u32,
}

pub fn default_cutoff() -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date")
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            panels: PanelKind::ALL.to_vec(),
            modes: vec![Mode::Mv, Mode::Uv],
            ns: vec![126, 252, 504, 756],
            ms: vec![21, 63],
            cutoff: default_cutoff(),
            point_quantile: 0.5,
            warmup_months: WARMUP_MONTHS,
        }
    }
}

impl GridSpec {
    pub fn validate(&self, horizon_capacity: Option<usize>) -> Result<()> {
        if self.ns.contains(&0) || self.ms.contains(&0) {
            return Err(Error::Config("n and m must be positive".into()));
        }
        if let Some(cap) = horizon_capacity {
            if let Some(m) = self.ms.iter().find(|&&m| m > cap) {
                return Err(Error::Config(format!(
                    "horizon {m} exceeds the model's capacity of {cap}"
                )));
            }
        }
        if !(self.point_quantile > 0.0 && self.point_quantile < 1.0) {
            return Err(Error::Config("point_quantile must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn regime(&self, origin: NaiveDate) -> Regime {
        if origin < self.cutoff {
            Regime::Pre
        } else {
            Regime::Post
        }
    }
}

/// Everything a forecaster may look at for one grid cell.
pub struct Request<'a> {
    pub panel_kind: PanelKind,
    pub panel: &'a SeriesPanel,
    pub mode: Mode,
    pub origin: NaiveDate,
    /// Context of the series being forecast (`active` rows of the panel).
    pub context: &'a Window,
    pub active: &'a [usize],
    pub m: usize,
}

/// Produces one point path of length `m` per active series.
pub trait Forecaster: Sync {
    fn point_forecast(&self, req: &Request<'_>) -> Result<Vec<Vec<f64>>>;
}

/// The trained network; the point path is the configured quantile.
pub struct ModelForecaster {
    pub model: Model<f32>,
    pub point_quantile: f64,
}

impl Forecaster for ModelForecaster {
    fn point_forecast(&self, req: &Request<'_>) -> Result<Vec<Vec<f64>>> {
        let f = self.model.predict(&req.context.values, &req.context.mask, req.mode, req.m)?;
        let level = f
            .levels
            .iter()
            .position(|&l| (l - self.point_quantile).abs() < 1e-9)
            .ok_or_else(|| {
                Error::Config(format!("no quantile level {} in the model", self.point_quantile))
            })?;
        Ok((0..f.series).map(|s| f.path(s, level)).collect())
    }
}

/// Repeats the last observed context value.
pub struct LastValue;

impl Forecaster for LastValue {
    fn point_forecast(&self, req: &Request<'_>) -> Result<Vec<Vec<f64>>> {
        req.context
            .values
            .iter()
            .zip(&req.context.mask)
            .map(|(v, m)| {
                let last = v
                    .iter()
                    .zip(m)
                    .rev()
                    .find(|(_, ok)| **ok)
                    .map(|(x, _)| *x)
                    .ok_or_else(|| Error::Degenerate("no observed context value".into()))?;
                Ok(vec![last; req.m])
            })
            .collect()
    }
}

/// Reads the realized values off the panel; every metric is zero.
pub struct PerfectForesight;

impl Forecaster for PerfectForesight {
    fn point_forecast(&self, req: &Request<'_>) -> Result<Vec<Vec<f64>>> {
        let fut = req
            .panel
            .slice_future(req.origin, req.m)
            .ok_or_else(|| Error::Degenerate("origin has too few future days".into()))?;
        Ok(req.active.iter().map(|&k| fut.values[k].clone()).collect())
    }
}

/// A grid cell or series left out of the records, with the reason.
#[derive(Clone, Debug, PartialEq)]
pub struct Skip {
    pub panel: PanelKind,
    pub mode: Mode,
    pub n: usize,
    pub m: usize,
    pub origin: NaiveDate,
    pub series: String,
    pub reason: String,
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    panel: PanelKind,
    mode: Mode,
    n: usize,
    m: usize,
    origin: NaiveDate,
}

/// Origins per (panel, n, m) in grid order, for dry runs and counting.
pub fn plan(spec: &GridSpec, panels: &BTreeMap<PanelKind, SeriesPanel>) -> Vec<(PanelKind, usize, usize, Vec<NaiveDate>)> {
    let mut out = Vec::new();
    for &p in &spec.panels {
        let Some(panel) = panels.get(&p) else { continue };
        for &n in &spec.ns {
            for &m in &spec.ms {
                out.push((p, n, m, rolling_origins(&panel.dates, n, m, spec.warmup_months)));
            }
        }
    }
    out
}

fn cells(spec: &GridSpec, panels: &BTreeMap<PanelKind, SeriesPanel>) -> Vec<Cell> {
    let plan = plan(spec, panels);
    let mut out = Vec::new();
    for &p in &spec.panels {
        for &mode in &spec.modes {
            for (pk, n, m, origins) in plan.iter().filter(|c| c.0 == p) {
                for &origin in origins {
                    out.push(Cell {
                        panel: *pk,
                        mode,
                        n: *n,
                        m: *m,
                        origin,
                    });
                }
            }
        }
    }
    out
}

fn run_cell(
    spec: &GridSpec,
    panel: &SeriesPanel,
    cell: Cell,
    forecaster: &dyn Forecaster,
) -> (Vec<EvalRecord>, Vec<Skip>) {
    let skip_all = |ids: &mut dyn Iterator<Item = &String>, reason: &str| -> Vec<Skip> {
        ids.map(|s| Skip {
            panel: cell.panel,
            mode: cell.mode,
            n: cell.n,
            m: cell.m,
            origin: cell.origin,
            series: s.clone(),
            reason: reason.to_string(),
        })
        .collect()
    };
    let (Some(ctx), Some(fut)) = (
        panel.slice_context(cell.origin, cell.n),
        panel.slice_future(cell.origin, cell.m),
    ) else {
        return (Vec::new(), skip_all(&mut panel.ids.iter(), "insufficient history"));
    };
    let mut skips = Vec::new();
    let active: Vec<usize> = (0..panel.k())
        .filter(|&k| {
            let ok = ctx.mask[k].iter().any(|m| *m);
            if !ok {
                skips.extend(skip_all(&mut std::iter::once(&panel.ids[k]), "context entirely missing"));
            }
            ok
        })
        .collect();
    if active.is_empty() {
        return (Vec::new(), skips);
    }
    let sub = Window {
        dates: ctx.dates.clone(),
        values: active.iter().map(|&k| ctx.values[k].clone()).collect(),
        mask: active.iter().map(|&k| ctx.mask[k].clone()).collect(),
    };
    let req = Request {
        panel_kind: cell.panel,
        panel,
        mode: cell.mode,
        origin: cell.origin,
        context: &sub,
        active: &active,
        m: cell.m,
    };
    let paths = match forecaster.point_forecast(&req) {
        Ok(p) if p.len() == active.len() && p.iter().all(|x| x.len() == cell.m) => p,
        Ok(_) => {
            let ids: Vec<&String> = active.iter().map(|&k| &panel.ids[k]).collect();
            skips.extend(skip_all(&mut ids.into_iter(), "forecast has the wrong shape"));
            return (Vec::new(), skips);
        }
        Err(e) => {
            let ids: Vec<&String> = active.iter().map(|&k| &panel.ids[k]).collect();
            skips.extend(skip_all(&mut ids.into_iter(), &format!("forecast failed: {e}")));
            return (Vec::new(), skips);
        }
    };
    let mut records = Vec::with_capacity(active.len());
    for (path, &k) in paths.iter().zip(&active) {
        let (a, mask) = (&fut.values[k], &fut.mask[k]);
        match (rmse(a, path, Some(mask)), mape(a, path, Some(mask))) {
            (Ok(r), Ok((mp, skipped))) => records.push(EvalRecord {
                panel: cell.panel,
                mode: cell.mode,
                series: panel.ids[k].clone(),
                n: cell.n,
                m: cell.m,
                origin: cell.origin,
                rmse: r,
                mape: mp,
                skipped,
                regime: spec.regime(cell.origin),
            }),
            (Err(e), _) | (_, Err(e)) => {
                skips.extend(skip_all(&mut std::iter::once(&panel.ids[k]), &e.to_string()))
            }
        }
    }
    (records, skips)
}

/// Cells handed to the worker pool at once; records are passed to the sink
/// after each chunk, in canonical order.
pub const CHUNK: usize = 64;

/// Runs the grid. Records come out ordered by panel, mode, n, m, origin and
/// series (panel order) regardless of how many workers run; `sink` sees
/// them chunk by chunk as they complete.
pub fn run_grid(
    spec: &GridSpec,
    panels: &BTreeMap<PanelKind, SeriesPanel>,
    forecaster: &dyn Forecaster,
    mut sink: impl FnMut(&[EvalRecord]) -> Result<()>,
) -> Result<(Vec<EvalRecord>, Vec<Skip>)> {
    let all = cells(spec, panels);
    let mut records = Vec::new();
    let mut skips = Vec::new();
    for chunk in all.chunks(CHUNK) {
        let done = par::map_slice(chunk, |c| run_cell(spec, &panels[&c.panel], *c, forecaster));
        let start = records.len();
        for (r, s) in done {
            records.extend(r);
            skips.extend(s);
        }
        sink(&records[start..])?;
    }
    if !skips.is_empty() {
        warn!("{} series forecasts skipped", skips.len());
    }
    for s in &skips {
        debug!(
            "skipped {} {} n={} m={} {} {}: {}",
            s.panel, s.mode, s.n, s.m, s.origin, s.series, s.reason
        );
    }
    Ok((records, skips))
}
