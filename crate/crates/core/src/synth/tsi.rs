use serde::{Deserialize, Serialize};

use super::rng::CounterRng;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trend {
    #[serde(default)]
    pub level: f64,
    #[serde(default)]
    pub slope: f64,
    #[serde(default)]
    pub curvature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seasonal {
    pub period: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseFamily {
    #[default]
    Gaussian,
    StudentT {
        df: u32,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Noise {
    #[serde(default)]
    pub family: NoiseFamily,
    #[serde(default)]
    pub scale: f64,
}

/// Trend + seasonality + noise recipe for one univariate series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsiSpec {
    pub length: usize,
    #[serde(default)]
    pub trend: Trend,
    #[serde(default)]
    pub seasonal: Vec<Seasonal>,
    #[serde(default)]
    pub noise: Noise,
    pub seed: u64,
}

impl TsiSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::Config("tsi length must be at least 1".into()));
        }
        if let Some(s) = self.seasonal.iter().find(|s| !(s.period >= 2.0)) {
            return Err(Error::Config(format!("seasonal period {} < 2", s.period)));
        }
        if !(self.noise.scale >= 0.0) {
            return Err(Error::Config("noise scale must be nonnegative".into()));
        }
        if matches!(self.noise.family, NoiseFamily::StudentT { df: 0 }) {
            return Err(Error::Config("student-t needs df >= 1".into()));
        }
        Ok(())
    }

    /// Samples a recipe from the artifact's default ranges: level in ±1,
    /// slope in ±0.01/step, curvature in ±2e-5, zero to two seasonal terms
    /// with period in [4, 64] and amplitude in [0, 1.5], noise scale in
    /// [0.05, 0.5] with a one-in-four chance of Student-t (df 3..8).
    pub fn random(length: usize, seed: u64) -> Self {
        let mut r = CounterRng::new(seed).fork(0x7351);
        let trend = Trend {
            level: r.uniform_in(-1.0, 1.0),
            slope: r.uniform_in(-0.01, 0.01),
            curvature: r.uniform_in(-2e-5, 2e-5),
        };
        let n_season = r.below(3);
        let seasonal = (0..n_season)
            .map(|_| Seasonal {
                period: (4 + r.below(61)) as f64,
                amplitude: r.uniform_in(0.0, 1.5),
                phase: r.uniform_in(0.0, std::f64::consts::TAU),
            })
            .collect();
        let family = if r.bernoulli(0.25) {
            NoiseFamily::StudentT {
                df: 3 + r.below(6) as u32,
            }
        } else {
            NoiseFamily::Gaussian
        };
        Self {
            length,
            trend,
            seasonal,
            noise: Noise {
                family,
                scale: r.uniform_in(0.05, 0.5),
            },
            seed,
        }
    }
}

/// `x_t = trend(t) + Σ a·sin(2πt/period + phase) + noise_t`.
pub fn tsi_generate(spec: &TsiSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = CounterRng::new(spec.seed);
    let out = (0..spec.length)
        .map(|t| {
            let tf = t as f64;
            let trend = spec.trend.level + spec.trend.slope * tf + spec.trend.curvature * tf * tf;
            let season: f64 = spec
                .seasonal
                .iter()
                .map(|s| {
                    s.amplitude * (std::f64::consts::TAU * tf / s.period + s.phase).sin()
                })
                .sum();
            let eps = if spec.noise.scale > 0.0 {
                let z = match spec.noise.family {
                    NoiseFamily::Gaussian => rng.normal(),
                    NoiseFamily::StudentT { df } => rng.student_t(df),
                };
                spec.noise.scale * z
            } else {
                0.0
            };
            trend + season + eps
        })
        .collect();
    Ok(out)
}
