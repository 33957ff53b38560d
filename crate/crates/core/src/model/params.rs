use std::collections::HashMap;

use statrs::distribution::{ContinuousCDF, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::preprocess::PATCH_CHANNELS;
use crate::synth::CounterRng;
use crate::tensor::{Real, Tensor};

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

enum Init {
    /// Normal with std `gain / sqrt(fan_in)`, fan_in = first extent.
    Fan(f64),
    Const(f64),
    Normal(f64),
    QuantileBias,
}

/// Parameter names and shapes for `cfg`, in checkpoint order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.d_model;
    let pin = cfg.patch_len * PATCH_CHANNELS;
    let out = cfg.patch_len * cfg.n_quantiles();
    let mut v = vec![
        ("embed.w_in".into(), vec![pin, d], Init::Fan(1.0)),
        ("embed.b_in".into(), vec![d], Init::Const(0.0)),
        ("embed.w_out".into(), vec![d, d], Init::Fan(1.0)),
        ("embed.b_out".into(), vec![d], Init::Const(0.0)),
        ("embed.w_skip".into(), vec![pin, d], Init::Fan(1.0)),
        ("reg".into(), vec![1, d], Init::Normal(1.0)),
    ];
    for b in 0..cfg.n_blocks {
        for kind in ["time", "group"] {
            let p = format!("blocks.{b}.{kind}");
            for w in ["wq", "wk", "wv", "wo"] {
                v.push((format!("{p}.{w}"), vec![d, d], Init::Fan(1.0)));
            }
            v.push((format!("{p}.bo"), vec![d], Init::Const(0.0)));
            v.push((format!("{p}.ln_g"), vec![d], Init::Const(1.0)));
            v.push((format!("{p}.ln_b"), vec![d], Init::Const(0.0)));
        }
        let p = format!("blocks.{b}.ffn");
        v.push((format!("{p}.w1"), vec![d, cfg.ffn_hidden], Init::Fan(1.0)));
        v.push((format!("{p}.b1"), vec![cfg.ffn_hidden], Init::Const(0.0)));
        v.push((format!("{p}.w2"), vec![cfg.ffn_hidden, d], Init::Fan(1.0)));
        v.push((format!("{p}.b2"), vec![d], Init::Const(0.0)));
        v.push((format!("{p}.ln_g"), vec![d], Init::Const(1.0)));
        v.push((format!("{p}.ln_b"), vec![d], Init::Const(0.0)));
    }
    v.push(("head.w".into(), vec![d, out], Init::Fan(0.1)));
    v.push(("head.b".into(), vec![out], Init::QuantileBias));
    v
}

impl<T: Real> Params<T> {
    /// Seeded initialization. The head bias starts at `asinh(z_τ)` for each
    /// level so untrained forecasts already spread like a scaled normal.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let root = CounterRng::new(seed);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let q = cfg.n_quantiles();
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (i, (name, shape, init)) in layout(cfg).into_iter().enumerate() {
            let mut r = root.fork(i as u64);
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Fan(g) => {
                    let s = g / (shape[0] as f64).sqrt();
                    (0..n).map(|_| s * r.normal()).collect()
                }
                Init::Const(c) => vec![c; n],
                Init::Normal(s) => (0..n).map(|_| s * r.normal()).collect(),
                Init::QuantileBias => (0..n)
                    .map(|j| {
                        std_normal
                            .inverse_cdf(cfg.quantile_levels[j % q])
                            .asinh()
                    })
                    .collect(),
            };
            names.push(name);
            tensors.push(Tensor::from_f64(&shape, &data)?);
        }
        Ok(Self::from_parts(names, tensors))
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self {
            names,
            tensors,
            index,
        }
    }

    /// Checks names and shapes against the layout implied by `cfg`.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        let want = layout(cfg);
        if want.len() != self.names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                want.len(),
                self.names.len()
            )));
        }
        for ((name, shape, _), (have, t)) in want.iter().zip(self.iter()) {
            if name != have || shape.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {have} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params::from_parts(self.names.clone(), self.tensors.iter().map(Tensor::cast).collect())
    }

    /// True when every tensor is bitwise equal.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.f64().to_bits() == y.f64().to_bits())
            })
    }
}
