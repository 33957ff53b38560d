//! Synthetic pretraining corpora: trend/seasonality/noise series, lagged
//! causal-graph autoregressions, and multivariate panels derived from
//! univariate bases. Every generator is a pure function of its spec and seed.

mod derive;
mod io;
mod rng;
mod tcm;
mod tsi;

pub use derive::{derive_multivariate, BaseSpec, DerivedSpec};
pub use io::{load_corpus, read_series_csv, write_dataset, Dataset, DatasetKind, DatasetSpec};
pub use rng::{mix64, CounterRng};
pub use tcm::{tcm_generate, TcmSampler, TcmSpec};
pub use tsi::{tsi_generate, Noise, NoiseFamily, Seasonal, Trend, TsiSpec};
