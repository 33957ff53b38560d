//! Long-format dataset files with JSON provenance.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DerivedSpec, TcmSpec, TsiSpec};
use crate::error::{Error, Result};

/// Generator recipe stored next to each dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "spec", rename_all = "snake_case")]
pub enum DatasetSpec {
    Tsi(TsiSpec),
    Tcm(TcmSpec),
    Derived(DerivedSpec),
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<Vec<Vec<f64>>> {
        match self {
            DatasetSpec::Tsi(s) => Ok(vec![super::tsi_generate(s)?]),
            DatasetSpec::Tcm(s) => super::tcm_generate(s),
            DatasetSpec::Derived(s) => s.generate(),
        }
    }

    pub fn kind(&self) -> DatasetKind {
        match self {
            DatasetSpec::Tsi(_) => DatasetKind::Tsi,
            DatasetSpec::Tcm(_) => DatasetKind::Tcm,
            DatasetSpec::Derived(_) => DatasetKind::Derived,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Tsi,
    Tcm,
    Derived,
}

/// One synthetic panel: one or more equally long series.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub kind: DatasetKind,
    pub series: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    series_id: usize,
    t: usize,
    value: String,
}

/// Writes `<name>.csv` (`series_id,t,value`) and `<name>.json`.
pub fn write_dataset(
    dir: &Path,
    name: &str,
    series: &[Vec<f64>],
    spec: &DatasetSpec,
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{name}.csv"));
    let json_path = dir.join(format!("{name}.json"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    for (id, s) in series.iter().enumerate() {
        for (t, v) in s.iter().enumerate() {
            w.serialize(Row {
                series_id: id,
                t,
                value: crate::fmt_f64(*v),
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let json = serde_json::to_string_pretty(spec)?;
    fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    Ok((csv_path, json_path))
}

pub fn read_series_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (line, row) in r.deserialize::<Row>().enumerate() {
        let row = row?;
        let v: f64 = row.value.parse().map_err(|_| {
            Error::Data(format!("{}: row {}: bad value {:?}", path.display(), line + 1, row.value))
        })?;
        if row.series_id >= out.len() {
            out.resize_with(row.series_id + 1, Vec::new);
        }
        let s = &mut out[row.series_id];
        if row.t != s.len() {
            return Err(Error::Data(format!(
                "{}: row {}: series {} out of order at t={}",
                path.display(),
                line + 1,
                row.series_id,
                row.t
            )));
        }
        s.push(v);
    }
    Ok(out)
}

/// Loads every `*.csv` with a sibling `*.json` in `dir`, sorted by name.
pub fn load_corpus(dir: &Path) -> Result<Vec<Dataset>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    names.sort();
    let mut out = Vec::with_capacity(names.len());
    for csv_path in names {
        let json_path = csv_path.with_extension("json");
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let spec: DatasetSpec = serde_json::from_str(&text)?;
        out.push(Dataset {
            name: csv_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            kind: spec.kind(),
            series: read_series_csv(&csv_path)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::TcmSampler;

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec::Tcm(TcmSampler::default().sample(3).unwrap());
        let series = spec.generate().unwrap();
        write_dataset(dir.path(), "tcm_0000", &series, &spec).unwrap();
        let corpus = load_corpus(dir.path()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus[0].kind, DatasetKind::Tcm);
        for (a, b) in corpus[0].series.iter().flatten().zip(series.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
