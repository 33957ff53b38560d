use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::DatasetKind;

/// One curriculum stage: the longest context sampled and how many steps run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub context: usize,
    pub steps: u64,
    /// Task mix for this stage; the config-wide mix when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<TaskMix>,
    /// Draw only from datasets of these kinds; all kinds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinds: Option<Vec<DatasetKind>>,
}

impl Stage {
    pub fn new(context: usize, steps: u64) -> Self {
        Self {
            context,
            steps,
            mix: None,
            kinds: None,
        }
    }
}

impl TaskMix {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.uv, self.mv, self.covariate];
        if parts.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "task mix {parts:?} must be nonnegative and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Probabilities of drawing a univariate, multivariate or covariate task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMix {
    pub uv: f64,
    pub mv: f64,
    pub covariate: f64,
}

impl Default for TaskMix {
    fn default() -> Self {
        Self {
            uv: 0.4,
            mv: 0.4,
            covariate: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stages: Vec<Stage>,
    /// Groups (tasks) per batch.
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Cosine decay of the learning rate to zero over all stages.
    pub cosine_decay: bool,
    pub mix: TaskMix,
    /// Shortest context drawn in any stage.
    pub min_context: usize,
    /// Most series in one multivariate or covariate group.
    pub max_group: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stages: vec![Stage::new(256, 5000), Stage::new(512, 5000)],
            batch_size: 32,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            cosine_decay: false,
            mix: TaskMix::default(),
            min_context: 32,
            max_group: 8,
            seed: 0,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.mix.validate()?;
        if self.stages.is_empty() {
            return Err(Error::Config("at least one stage is required".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.context == 0 {
                return Err(Error::Config(format!("stage {} has zero context", i + 1)));
            }
            if let Some(m) = &s.mix {
                m.validate()
                    .map_err(|e| Error::Config(format!("stage {}: {e}", i + 1)))?;
            }
            if s.kinds.as_ref().is_some_and(Vec::is_empty) {
                return Err(Error::Config(format!("stage {} allows no dataset kind", i + 1)));
            }
        }
        if self.batch_size == 0 || self.max_group < 2 || self.min_context == 0 {
            return Err(Error::Config(
                "batch_size and min_context must be positive, max_group at least 2".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is invalid", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.stages.iter().map(|s| s.steps).sum()
    }

    /// Zero-based stage index that runs global step `step` (zero-based).
    pub fn stage_of(&self, step: u64) -> usize {
        let mut end = 0;
        for (i, s) in self.stages.iter().enumerate() {
            end += s.steps;
            if step < end {
                return i;
            }
        }
        self.stages.len() - 1
    }

    /// Learning rate at zero-based step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if !self.cosine_decay {
            return self.lr;
        }
        let total = self.total_steps().max(1) as f64;
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * step as f64 / total).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.total_steps(), 10_000);
        assert_eq!(c.stage_of(4999), 0);
        assert_eq!(c.stage_of(5000), 1);
    }

    #[test]
    fn mix_must_sum_to_one() {
        let mut c = TrainConfig::default();
        c.mix.uv = 0.5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.mix = TaskMix {
            uv: 1.2,
            mv: -0.2,
            covariate: 0.0,
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let c = TrainConfig {
            cosine_decay: true,
            ..TrainConfig::default()
        };
        assert_eq!(c.lr_at(0), c.lr);
        assert!(c.lr_at(10_000).abs() < 1e-18);
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"lr": 0.1, "bogus": 1}"#);
        assert!(r.is_err());
    }
}
