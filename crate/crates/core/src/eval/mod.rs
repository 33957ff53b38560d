//! Rolling-origin evaluation: metrics, the experiment grid, records and
//! the summary artifacts.

mod grid;
mod metrics;
mod origins;
mod records;
pub mod report;

pub use grid::{
    default_cutoff, plan, run_grid, Forecaster, GridSpec, LastValue, ModelForecaster,
    PerfectForesight, Request, Skip, CHUNK,
};
pub use metrics::{mape, rmse, scaled_pinball, MAPE_FLOOR};
pub use origins::{rolling_origins, WARMUP_MONTHS};
pub use records::{
    parse_records, read_records, write_records, EvalRecord, RecordWriter, Regime, RECORDS_HEADER,
};
pub use report::{
    aggregate_mode, build_report, compare_series, emit_artifacts, regime_report, ModeSummary,
    RegimeReport, Report, SeriesComparison, ARTIFACT_FILES,
};
