use std::fs;
use std::path::{Path, PathBuf};

use groupcast::eval::GridSpec;
use groupcast::model::ModelConfig;
use groupcast::panel::Join;
use groupcast::synth::{DatasetSpec, TcmSampler};
use groupcast::train::TrainConfig;
use groupcast::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Output directory used when neither the flag, the config nor
/// `GROUPCAST_OUT` names one.
pub const DEFAULT_OUT: &str = "groupcast-out";
pub const OUT_ENV: &str = "GROUPCAST_OUT";

/// Randomly drawn trend/seasonal/noise series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsiFamily {
    pub count: usize,
    pub length: usize,
}

impl Default for TsiFamily {
    fn default() -> Self {
        Self { count: 0, length: 1024 }
    }
}

/// Random lagged causal-graph panels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcmFamily {
    pub count: usize,
    pub sampler: TcmSampler,
}

/// Lead-lag panels built from one random trend/seasonal/noise base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DerivedFamily {
    pub count: usize,
    pub length: usize,
    pub k: usize,
    pub lag_step: usize,
    pub noise_scale: f64,
}

impl Default for DerivedFamily {
    fn default() -> Self {
        Self {
            count: 0,
            length: 1024,
            k: 3,
            lag_step: 2,
            noise_scale: 0.05,
        }
    }
}

/// Datasets written by `synth`: explicit recipes first, then the families.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub specs: Vec<DatasetSpec>,
    pub tsi: TsiFamily,
    pub tcm: TcmFamily,
    pub derived: DerivedFamily,
}

impl SynthConfig {
    pub fn total(&self) -> usize {
        self.specs.len() + self.tsi.count + self.tcm.count + self.derived.count
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PanelPaths {
    pub stocks: Option<PathBuf>,
    pub rates: Option<PathBuf>,
    pub join: Join,
}

/// Everything a run needs. Unset paths default to fixed names under the
/// output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Drives synthetic generation, weight initialization and batch order.
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub corpus_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub panels: PanelPaths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub grid: GridSpec,
    /// Worker threads; all available cores when unset.
    pub workers: Option<usize>,
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `key=value`
    /// overrides, and re-validates the result against the schema.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Error> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                // Parsing first rejects unknown keys; re-serializing fills
                // defaults so every key is addressable by an override.
                let parsed: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                serde_json::to_value(parsed)?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| {
            std::env::var_os(OUT_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
        })
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus_dir.clone().unwrap_or_else(|| self.out_dir().join("corpus"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir().join("checkpoint.bin"))
    }

    pub fn records_path(&self) -> PathBuf {
        self.records.clone().unwrap_or_else(|| self.out_dir().join("records.csv"))
    }

    pub fn log_path(&self) -> PathBuf {
        self.out_dir().join("train_log.csv")
    }

    pub fn artifacts_dir(&self) -> PathBuf {
        self.out_dir().join("artifacts")
    }

    /// A master seed replaces the training seed as well.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.model.validate()?;
        self.train.validate()?;
        self.grid.validate(None)?;
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let d = &self.synth.derived;
        if d.count > 0 && (d.k == 0 || d.length == 0) {
            return Err(Error::Config("derived family needs k >= 1 and length >= 1".into()));
        }
        if self.synth.tsi.count > 0 && self.synth.tsi.length == 0 {
            return Err(Error::Config("tsi family needs length >= 1".into()));
        }
        Ok(())
    }
}

/// Sets the dotted path `key` to `value`, parsed as JSON when possible and
/// as a string otherwise. Numeric segments index into arrays.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), Error> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let unknown = || Error::Config(format!("unknown configuration key {key:?}"));
        cur = match cur {
            Value::Object(map) => {
                if !map.contains_key(*part) {
                    return Err(unknown());
                }
                map.get_mut(*part).expect("present")
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| unknown())?;
                items.get_mut(idx).ok_or_else(unknown)?
            }
            _ => return Err(unknown()),
        };
        if last {
            *cur = parsed;
            return Ok(());
        }
    }
    unreachable!("split yields at least one segment")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields_and_arrays() {
        let c = RunConfig::load(
            None,
            &[
                "seed=9".into(),
                "train.stages.1.steps=7".into(),
                "grid.modes=[\"UV\"]".into(),
                "out_dir=/tmp/x".into(),
                "panels.stocks=s.csv".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.stages[1].steps, 7);
        assert_eq!(c.grid.modes, vec![groupcast::model::Mode::Uv]);
        assert_eq!(c.out_dir(), PathBuf::from("/tmp/x"));
        assert_eq!(c.panels.stocks, Some(PathBuf::from("s.csv")));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        for o in ["bogus=1", "train.nope=1", "train.stages.9.steps=1", "seed", "model..d_model=1"] {
            assert!(
                matches!(RunConfig::load(None, &[o.to_string()]), Err(Error::Config(_))),
                "{o}"
            );
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"model": {"d_model": 32, "extra": 1}}"#).unwrap();
        assert!(matches!(RunConfig::load(Some(&p), &[]), Err(Error::Config(_))));
        fs::write(&p, r#"{"model": {"d_model": 32}}"#).unwrap();
        assert_eq!(RunConfig::load(Some(&p), &[]).unwrap().model.d_model, 32);
    }

    #[test]
    fn wrong_types_are_config_errors() {
        assert!(matches!(
            RunConfig::load(None, &["seed=\"abc\"".into()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn master_seed_drives_training() {
        let mut c = RunConfig::default();
        c.set_seed(42);
        assert_eq!((c.seed, c.train.seed), (42, 42));
    }
}
