use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 21 forecast quantile levels: 0.01, 0.05, 0.10, …, 0.95, 0.99.
pub fn default_quantile_levels() -> Vec<f64> {
    let mut v = vec![0.01];
    v.extend((1..=19).map(|i| i as f64 * 0.05));
    v.push(0.99);
    v
}

/// Index of the 0.5 level in [`default_quantile_levels`].
pub const MEDIAN_INDEX: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Number of (time attention, group attention, feed-forward) blocks.
    pub n_blocks: usize,
    pub n_heads: usize,
    /// Feed-forward hidden width.
    pub ffn_hidden: usize,
    /// Patch length in positions.
    pub patch_len: usize,
    pub max_context: usize,
    /// Future patch slots the head can fill.
    pub horizon_patches: usize,
    pub quantile_levels: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_blocks: 2,
            n_heads: 4,
            ffn_hidden: 128,
            patch_len: 8,
            max_context: 512,
            horizon_patches: 8,
            quantile_levels: default_quantile_levels(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let q = &self.quantile_levels;
        if q.len() != 21 {
            return Err(Error::Config(format!("expected 21 quantile levels, got {}", q.len())));
        }
        if q.iter().any(|&t| !(t > 0.0 && t < 1.0)) || q.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "quantile levels must be strictly increasing within (0, 1)".into(),
            ));
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.d_model / self.n_heads).is_multiple_of(2) {
            return Err(Error::Config("head width must be even for rotary positions".into()));
        }
        if self.patch_len == 0 || self.horizon_patches == 0 || self.ffn_hidden == 0 {
            return Err(Error::Config(
                "patch_len, horizon_patches and ffn_hidden must be positive".into(),
            ));
        }
        if self.max_context < self.patch_len {
            return Err(Error::Config("max_context shorter than one patch".into()));
        }
        Ok(())
    }

    pub fn n_quantiles(&self) -> usize {
        self.quantile_levels.len()
    }

    /// Longest forecast, in positions, the head can emit.
    pub fn horizon_capacity(&self) -> usize {
        self.horizon_patches * self.patch_len
    }

    pub fn median_index(&self) -> usize {
        self.quantile_levels
            .iter()
            .position(|&t| (t - 0.5).abs() < 1e-12)
            .unwrap_or(MEDIAN_INDEX)
    }
}
