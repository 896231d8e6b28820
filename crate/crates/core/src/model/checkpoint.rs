//! `TFSN` checkpoint: magic, `u32` version, `u32`-prefixed TOML header
//! holding the model config and input normalization, `u32` tensor count,
//! then per tensor a `u32`-prefixed name, `u32` rank, `u32` dims and `f32`
//! little-endian data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, StudentModel};
use crate::error::{Error, Result};
use crate::features::NormStats;
use crate::numcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TFSN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    normalization: NormStats,
    model: ModelConfig,
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("string is not UTF-8".into()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

pub(crate) fn config_text(config: &ModelConfig, norm: NormStats) -> Result<String> {
    toml::to_string(&Header { normalization: norm, model: config.clone() })
        .map_err(|e| Error::Format(format!("cannot encode model config: {e}")))
}

pub(crate) fn parse_config_text(text: &str) -> Result<(ModelConfig, NormStats)> {
    let h: Header = toml::from_str(text).map_err(|e| Error::Format(format!("bad embedded config: {e}")))?;
    Ok((h.model, h.normalization))
}

impl StudentModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION as usize);
        put_str(&mut out, &config_text(&self.config, self.norm)?);
        put_u32(&mut out, self.params.len());
        for p in &self.params {
            put_str(&mut out, &p.name);
            put_u32(&mut out, p.tensor.shape().len());
            for &d in p.tensor.shape() {
                put_u32(&mut out, d);
            }
            for &v in p.tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a TFSN checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let (config, norm) = parse_config_text(&r.string()?)?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
            tensors.push((name, Tensor::new(shape, data)?));
        }
        r.finish()?;
        StudentModel::from_parameters(config, tensors, norm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
