//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! "PRID1" | u32 count | count × ( u16 name_len | name | u8 rank | rank × u64 dim | f32 data… )
//! ```
//!
//! Parameters appear in lexicographic name order.

use std::path::Path;

use super::{ModelConfig, ParamSet, ReidModel};
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"PRID1";

pub fn encode_params(params: &ParamSet<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + params.values().map(|t| t.len() * 4 + 64).sum::<usize>());
    out.extend_from_slice(MAGIC);
    let count = u32::try_from(params.len()).map_err(|_| Error::Checkpoint("too many parameters".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in params {
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("parameter name too long: {name}")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Checkpoint(format!("parameter {name}: rank too high")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamSet<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic").ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic; not a PRID1 checkpoint".into()));
    }
    let count = u32::from_le_bytes(r.array("parameter count")?);
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.array("name length")?) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.array::<1>("rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(r.array(&format!("{name} dims"))?);
            shape.push(usize::try_from(d).map_err(|_| Error::Checkpoint(format!("{name}: dimension overflow")))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?;
        let data = r
            .take(numel, &format!("{name} data"))?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if params.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Checkpoint(format!("parameter {name} appears twice")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(params)
}

pub fn save_checkpoint(model: &ReidModel, path: &Path) -> Result<()> {
    atomic_write(path, &encode_params(model.params())?)
}

/// Raw parameters without configuration checks.
pub fn read_params(path: &Path) -> Result<ParamSet<f32>> {
    decode_params(&read(path)?)
}

pub fn load_checkpoint(path: &Path, config: ModelConfig) -> Result<ReidModel> {
    ReidModel::from_params(config, read_params(path)?)
}
