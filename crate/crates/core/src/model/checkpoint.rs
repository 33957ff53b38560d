//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "GRPCKPT\0"
//! version  u32 LE   1
//! header   u32 LE length, then UTF-8 JSON {"model": ModelConfig, "step": u64}
//! count    u32 LE   number of records
//! record   u32 LE name length, name bytes, u32 LE rank,
//!          rank × u64 LE extents, product(extents) × f32 LE values
//! ```
//!
//! Model weights come first in parameter order. Optimizer moments, when
//! present, follow as `adam.m.<name>` and `adam.v.<name>` records.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::Params;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GRPCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    step: u64,
}

/// Adaptive-moment accumulators, shaped like the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Params<f32>,
    pub v: Params<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub step: u64,
    pub params: Params<f32>,
    pub moments: Option<Moments>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank())?;
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("extent {v} too large")))
    }

    fn record(&mut self) -> Result<(String, Tensor<f32>)> {
        let n = self.u32()?;
        let name = std::str::from_utf8(self.take(n)?)
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .and_then(|l| l.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("record {name} too large")))?;
        let data = self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header {
            model: self.model.clone(),
            step: self.step,
        })?;
        put_u32(&mut out, header.len())?;
        out.extend_from_slice(&header);
        let extra = self.moments.as_ref().map_or(0, |_| 2 * self.params.len());
        put_u32(&mut out, self.params.len() + extra)?;
        for (name, t) in self.params.iter() {
            put_record(&mut out, name, t)?;
        }
        if let Some(mo) = &self.moments {
            for (tag, p) in [("m", &mo.m), ("v", &mo.v)] {
                for (name, t) in p.iter() {
                    put_record(&mut out, &format!("adam.{tag}.{name}"), t)?;
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()? as u32;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = r.u32()?;
        let header: Header = serde_json::from_slice(r.take(n)?)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        header.model.validate()?;
        let count = r.u32()?;
        let (mut names, mut tensors) = (Vec::new(), Vec::new());
        let (mut mn, mut mt, mut vn, mut vt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for _ in 0..count {
            let (name, t) = r.record()?;
            if let Some(rest) = name.strip_prefix("adam.m.") {
                mn.push(rest.to_string());
                mt.push(t);
            } else if let Some(rest) = name.strip_prefix("adam.v.") {
                vn.push(rest.to_string());
                vt.push(t);
            } else {
                names.push(name);
                tensors.push(t);
            }
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        let params = Params::from_parts(names, tensors);
        params
            .check_layout(&header.model)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let moments = if mn.is_empty() && vn.is_empty() {
            None
        } else {
            let m = Params::from_parts(mn, mt);
            let v = Params::from_parts(vn, vt);
            for p in [&m, &v] {
                p.check_layout(&header.model)
                    .map_err(|e| Error::Checkpoint(format!("moments: {e}")))?;
            }
            Some(Moments { m, v })
        };
        Ok(Self {
            model: header.model,
            step: header.step,
            params,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
