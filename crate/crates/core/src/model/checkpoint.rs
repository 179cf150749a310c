//! Binary checkpoint format.
//!
//! ```text
//! "GOBERT1"
//! u64 header length, JSON header
//! u32 block count
//! per block: u16 name length, name, u8 ndim, u32 dims..., f32 LE data
//! ```
//! Optimiser moments are stored as extra blocks prefixed `adam.m.` and
//! `adam.v.`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParameters};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"GOBERT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    /// Optimiser steps taken so far.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
    /// Term ids in vocabulary order (specials excluded).
    pub vocabulary: Vec<String>,
    /// Free-form echo of the training configuration.
    #[serde(default)]
    pub train: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParameters<f32>,
    /// Adam first and second moments, when saved from a training run.
    pub moments: Option<(ModelParameters<f32>, ModelParameters<f32>)>,
}

fn write_blocks(out: &mut Vec<u8>, prefix: &str, params: &ModelParameters<f32>) {
    for b in params.blocks() {
        let name = format!("{prefix}{}", b.name);
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(b.shape.len() as u8);
        for &d in &b.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in b.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(header.len() + 4 * self.params.parameter_count() * 3 + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let per = self.params.blocks().len();
        let count = if self.moments.is_some() { per * 3 } else { per };
        out.extend_from_slice(&(count as u32).to_le_bytes());
        write_blocks(&mut out, "", &self.params);
        if let Some((m, v)) = &self.moments {
            write_blocks(&mut out, "adam.m.", m);
            write_blocks(&mut out, "adam.v.", v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("missing GOBERT1 magic".into()));
        }
        let header_len = r.u64()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)?;
        header.model.validate()?;
        let count = r.u32()? as usize;
        let mut blocks: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("block too large".into()))?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if blocks.insert(name.clone(), (shape, data)).is_some() {
                return Err(Error::Checkpoint(format!("duplicate block {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let template = ModelParameters::<f32>::init_random(header.model.clone(), 0)?.zeros_like();
        let mut fill = |prefix: &str, required: bool| -> Result<Option<ModelParameters<f32>>> {
            let mut p = template.clone();
            let mut found = 0;
            for b in p.blocks_mut() {
                let key = format!("{prefix}{}", b.name);
                match blocks.remove(&key) {
                    Some((shape, data)) => {
                        if shape != b.shape {
                            return Err(Error::Checkpoint(format!("block {key} has shape {shape:?}, expected {:?}", b.shape)));
                        }
                        b.data.copy_from_slice(&data);
                        found += 1;
                    }
                    None if required || found > 0 => return Err(Error::Checkpoint(format!("missing block {key}"))),
                    None => return Ok(None),
                }
            }
            Ok(Some(p))
        };
        let params = fill("", true)?.expect("required blocks present");
        let m = fill("adam.m.", false)?;
        let v = fill("adam.v.", false)?;
        let moments = match (m, v) {
            (Some(m), Some(v)) => Some((m, v)),
            (None, None) => None,
            _ => return Err(Error::Checkpoint("only one Adam moment stored".into())),
        };
        if let Some(name) = blocks.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected block {name}")));
        }
        if let Some(name) = params.first_non_finite() {
            return Err(Error::Checkpoint(format!("block {name} holds a non-finite value")));
        }
        Ok(Self { header, params, moments })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig { hidden: 4, layers: 1, heads: 2, ffn_dim: 6, vocab_size: 7, label_size: 4, ..Default::default() };
        let params = ModelParameters::<f32>::init_random(cfg.clone(), 3).unwrap();
        let header = CheckpointHeader {
            model: cfg,
            step: 12,
            epoch: 2,
            vocabulary: vec!["GO:0000001".into()],
            train: serde_json::json!({"lr": 0.001}),
        };
        Checkpoint { header, moments: Some((params.clone(), params.zeros_like())), params }
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let plain = Checkpoint { moments: None, ..c };
        assert_eq!(Checkpoint::from_bytes(&plain.to_bytes().unwrap()).unwrap(), plain);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"GOBERT2").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
