//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "ECGSENET"
//! version      u32       currently 1
//! config_len   u32
//! config       UTF-8 key=value lines (SeResNetConfig echo)
//! n_arrays     u32
//! per array:
//!   name_len   u32
//!   name       UTF-8, e.g. "blocks.0.conv1.weight"
//!   rank       u32
//!   dims       rank x u64
//!   data       product(dims) x f64 (IEEE 754, little-endian)
//! ```
//!
//! Arrays appear in model visiting order and include batch-norm running
//! statistics.

use std::collections::HashMap;
use std::path::Path;

use super::layers::{Slot, Visit};
use super::model::{SeResNet, SeResNetConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ECGSENET";
pub const VERSION: u32 = 1;

pub fn encode(model: &SeResNet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = model.config().to_key_values();
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    let mut arrays: Vec<(String, Tensor)> = Vec::new();
    model.visit("", &mut |name, t, _| {
        arrays.push((name.to_string(), t.clone()))
    });
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, t) in &arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<SeResNet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = SeResNetConfig::from_key_values(&r.string()?)?;
    let n = r.u32()? as usize;
    let mut arrays = HashMap::with_capacity(n);
    for _ in 0..n {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(
            len.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("array too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    let mut model = SeResNet::new(config)?;
    let mut problem = None;
    model.visit_mut("", &mut |name, slot| {
        let target = match slot {
            Slot::Param(p) => &mut p.value,
            Slot::Buffer(t) => t,
        };
        match arrays.remove(name) {
            Some(t) if t.shape() == target.shape() => *target = t,
            Some(t) => {
                problem.get_or_insert(format!(
                    "{name}: stored shape {:?}, model expects {:?}",
                    t.shape(),
                    target.shape()
                ));
            }
            None => {
                problem.get_or_insert(format!("missing array {name}"));
            }
        }
    });
    if let Some(p) = problem {
        return Err(Error::Checkpoint(p));
    }
    if let Some(extra) = arrays.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected array {extra}")));
    }
    Ok(model)
}

pub fn save(path: impl AsRef<Path>, model: &SeResNet) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<SeResNet> {
    decode(&std::fs::read(path)?)
}
