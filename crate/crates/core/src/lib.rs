//! Group-attention quantile forecasting for panels of related time series.
//!
//! The crate covers the whole pipeline: a small reverse-mode tensor engine,
//! robust scaling and patching, an encoder that alternates time attention
//! (rotary positions) with group attention across series, synthetic
//! pretraining corpora, a quantile-regression trainer, panel ingestion, and
//! the rolling-origin harness that compares multivariate and univariate
//! forecasts.

pub mod error;
pub mod eval;
pub mod model;
pub mod panel;
pub mod par;
pub mod preprocess;
pub mod tensor;
pub mod train;

pub mod synth;

pub use error::{Error, Result};

/// Formats a float with 17 significant digits, the width used by every CSV
/// this crate writes; parsing the text recovers the exact bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
