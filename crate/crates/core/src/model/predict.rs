use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::batch::{GroupBatch, SeriesInput};
use super::config::ModelConfig;
use super::network::{forward, Bound};
use super::params::Params;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape};

/// How series of a panel are grouped at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Every series in its own group.
    #[serde(rename = "UV", alias = "uv")]
    Uv,
    /// All series of the panel share one group.
    #[serde(rename = "MV", alias = "mv")]
    Mv,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Mv, Mode::Uv];

    pub fn group_ids(self, k: usize) -> Vec<u32> {
        match self {
            Mode::Uv => (0..k as u32).collect(),
            Mode::Mv => vec![0; k],
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Uv => "UV",
            Mode::Mv => "MV",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "UV" => Ok(Mode::Uv),
            "MV" => Ok(Mode::Mv),
            _ => Err(Error::Config(format!("unknown mode {s:?}, expected UV or MV"))),
        }
    }
}

/// Quantile paths in original units, `series × horizon × levels`, sorted
/// across levels at every position.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileForecast {
    pub series: usize,
    pub horizon: usize,
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

impl QuantileForecast {
    pub fn quantiles(&self, series: usize, t: usize) -> &[f64] {
        let q = self.levels.len();
        let off = (series * self.horizon + t) * q;
        &self.values[off..off + q]
    }

    /// Path of level index `level` for one series.
    pub fn path(&self, series: usize, level: usize) -> Vec<f64> {
        (0..self.horizon)
            .map(|t| self.quantiles(series, t)[level])
            .collect()
    }

    /// Median path used as the point forecast.
    pub fn median(&self, series: usize) -> Vec<f64> {
        self.path(series, self.levels.len() / 2)
    }

    pub fn is_monotone(&self) -> bool {
        self.values
            .chunks(self.levels.len())
            .all(|c| c.windows(2).all(|w| w[0] <= w[1]))
    }
}

/// A configuration plus weights, ready for inference.
#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    pub config: ModelConfig,
    pub params: Params<T>,
}

impl<T: Real> Model<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = Params::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn new(config: ModelConfig, params: Params<T>) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config)?;
        Ok(Self { config, params })
    }

    /// Raw scaled-space head output `[rows, horizon·P, Q]` for a built batch.
    pub fn forward_raw(&self, batch: &GroupBatch) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let p = Bound::new(&mut tape, &self.params, false);
        let out = forward(&mut tape, &p, &self.config, batch)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Forecasts the next `m` points of each input row. Rows sharing a
    /// group id are forecast jointly.
    pub fn predict_group(
        &self,
        inputs: &[SeriesInput<'_>],
        group_ids: &[u32],
        m: usize,
    ) -> Result<QuantileForecast> {
        let p = self.config.patch_len;
        if m == 0 || m > self.config.horizon_capacity() {
            return Err(Error::Config(format!(
                "horizon {m} outside 1..={}",
                self.config.horizon_capacity()
            )));
        }
        let hp = m.div_ceil(p);
        let batch = GroupBatch::build(inputs, group_ids, &self.config, hp)?;
        let raw = self.forward_raw(&batch)?;
        let q = self.config.n_quantiles();
        let hl = hp * p;
        let mut values = Vec::with_capacity(inputs.len() * m * q);
        let mut cell = vec![0.0f64; q];
        for (r, state) in batch.states.iter().enumerate() {
            for t in 0..m {
                let off = (r * hl + t) * q;
                for (c, v) in cell.iter_mut().zip(&raw[off..off + q]) {
                    *c = v.f64();
                }
                cell.sort_by(f64::total_cmp);
                values.extend(cell.iter().map(|&s| state.inverse(s)));
            }
        }
        Ok(QuantileForecast {
            series: inputs.len(),
            horizon: m,
            levels: self.config.quantile_levels.clone(),
            values,
            warnings: batch.warnings,
        })
    }

    /// Panel forecast: `values[k]` and `masks[k]` hold series k's context.
    pub fn predict(
        &self,
        values: &[Vec<f64>],
        masks: &[Vec<bool>],
        mode: Mode,
        m: usize,
    ) -> Result<QuantileForecast> {
        if values.len() != masks.len() {
            return Err(Error::shape("predict", &[values.len()], &[masks.len()]));
        }
        let inputs: Vec<_> = values
            .iter()
            .zip(masks)
            .map(|(v, k)| SeriesInput::target(v, k))
            .collect();
        self.predict_group(&inputs, &mode.group_ids(values.len()), m)
    }
}
