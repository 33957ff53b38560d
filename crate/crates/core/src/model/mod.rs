//! Patch-based encoder with time and group attention and a quantile head.

mod batch;
mod checkpoint;
mod config;
pub mod network;
mod params;
mod predict;

pub use batch::{GroupBatch, SeriesInput};
pub use checkpoint::{Checkpoint, Moments, MAGIC, VERSION};
pub use config::{default_quantile_levels, ModelConfig, MEDIAN_INDEX};
pub use network::{forward, forward_with, Bound, TokenLayout};
pub use params::Params;
pub use predict::{Mode, Model, QuantileForecast};
