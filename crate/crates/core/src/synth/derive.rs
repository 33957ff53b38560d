use serde::{Deserialize, Serialize};

use super::rng::CounterRng;
use super::tcm::{tcm_generate, TcmSpec};
use super::tsi::{tsi_generate, TsiSpec};
use crate::error::{Error, Result};

/// Source of one or more univariate base series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseSpec {
    Tsi(TsiSpec),
    /// Every variate of the simulated panel becomes a base.
    Tcm(TcmSpec),
}

/// Multivariate panel assembled from lag-shifted mixtures of bases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivedSpec {
    pub bases: Vec<BaseSpec>,
    /// `K × B` mixing weights.
    pub mixing: Vec<Vec<f64>>,
    /// `K × B` lag offsets, in steps.
    pub lags: Vec<Vec<usize>>,
    pub noise_scale: f64,
    pub seed: u64,
}

impl DerivedSpec {
    pub fn base_series(&self) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for b in &self.bases {
            match b {
                BaseSpec::Tsi(s) => out.push(tsi_generate(s)?),
                BaseSpec::Tcm(s) => out.extend(tcm_generate(s)?),
            }
        }
        Ok(out)
    }

    pub fn generate(&self) -> Result<Vec<Vec<f64>>> {
        derive_multivariate(
            &self.base_series()?,
            &self.mixing,
            &self.lags,
            self.noise_scale,
            self.seed,
        )
    }

    /// Lead-lag panel: output 0 is the base itself, output `k` copies it
    /// `k·lag_step` steps later, each with independent noise.
    pub fn lead_lag(base: BaseSpec, k: usize, lag_step: usize, noise_scale: f64, seed: u64) -> Self {
        Self {
            bases: vec![base],
            mixing: vec![vec![1.0]; k],
            lags: (0..k).map(|i| vec![i * lag_step]).collect(),
            noise_scale,
            seed,
        }
    }
}

/// `out_k[t] = Σ_b mixing[k][b] · base_b[t + L - lags[k][b]] + noise`, where
/// `L` is the largest lag, so every output has `base_len - L` points and a
/// positive lag makes an output trail its base.
pub fn derive_multivariate(
    bases: &[Vec<f64>],
    mixing: &[Vec<f64>],
    lags: &[Vec<usize>],
    noise_scale: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n_bases = bases.len();
    let len = bases.first().map_or(0, Vec::len);
    if n_bases == 0 || bases.iter().any(|b| b.len() != len) {
        return Err(Error::Config("bases must be non-empty and equally long".into()));
    }
    if mixing.len() != lags.len()
        || mixing.iter().any(|r| r.len() != n_bases)
        || lags.iter().any(|r| r.len() != n_bases)
    {
        return Err(Error::Config(format!(
            "mixing and lags must both be K x {n_bases}"
        )));
    }
    let max_lag = lags.iter().flatten().copied().max().unwrap_or(0);
    if max_lag >= len {
        return Err(Error::Config(format!(
            "lag offset {max_lag} out of range for base length {len}"
        )));
    }
    if !(noise_scale >= 0.0) {
        return Err(Error::Config("noise scale must be nonnegative".into()));
    }
    let out_len = len - max_lag;
    let root = CounterRng::new(seed);
    Ok(mixing
        .iter()
        .zip(lags)
        .enumerate()
        .map(|(k, (w, lag))| {
            let mut r = root.fork(k as u64);
            (0..out_len)
                .map(|t| {
                    let mut v = 0.0;
                    for b in 0..n_bases {
                        if w[b] != 0.0 {
                            v += w[b] * bases[b][t + max_lag - lag[b]];
                        }
                    }
                    if noise_scale > 0.0 {
                        v += noise_scale * r.normal();
                    }
                    v
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bases() -> Vec<Vec<f64>> {
        let mut r = CounterRng::new(5);
        (0..2).map(|_| (0..400).map(|_| r.normal()).collect()).collect()
    }

    #[test]
    fn identity_mixing_returns_bases() {
        let b = bases();
        let out = derive_multivariate(
            &b,
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[vec![0, 0], vec![0, 0]],
            0.0,
            1,
        )
        .unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn zero_row_is_pure_noise() {
        let b = bases();
        let out =
            derive_multivariate(&b, &[vec![0.0, 0.0]], &[vec![0, 0]], 0.5, 3).unwrap();
        let mut r = CounterRng::new(3).fork(0);
        let want: Vec<f64> = (0..400).map(|_| 0.5 * r.normal()).collect();
        assert_eq!(out[0], want);
    }

    #[test]
    fn cross_correlation_peaks_at_the_lag() {
        let b = bases();
        let out = derive_multivariate(
            &b[..1],
            &[vec![1.0], vec![1.0]],
            &[vec![0], vec![5]],
            0.05,
            8,
        )
        .unwrap();
        let (x, y) = (&out[0], &out[1]);
        let n = x.len();
        let xcorr = |lag: usize| -> f64 {
            (0..n - lag).map(|t| x[t] * y[t + lag]).sum::<f64>() / (n - lag) as f64
        };
        let best = (0..20)
            .max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b)))
            .unwrap();
        assert_eq!(best, 5);
    }

    #[test]
    fn out_of_range_lag() {
        let b = bases();
        let r = derive_multivariate(&b[..1], &[vec![1.0]], &[vec![400]], 0.0, 0);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
