//! Binary checkpoint format, little-endian throughout.
//!
//! ```text
//! "LBCK"  version:u8  scan_order:u8  hps_id:u8  lambda_index:u8
//! block:u16  n:u32  m:u32  k2:u8  lambda:f64  seed:u64
//! count:u32, then per parameter in name order:
//!   name_len:u16  name  rank:u8  dims:u32*rank  data:f32*len
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::blocks::SCAN_ORDER_ID;
use crate::error::{Error, Result};
use crate::layers::{HyperParams, Model};
use crate::tensor::{Float, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LBCK";
pub const CHECKPOINT_VERSION: u8 = 1;

/// First 8 bytes of the SHA-256 of `bytes`, read little-endian.
pub fn checksum64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Appends a name-sorted tensor map (count, then entries) as `f32`.
pub fn write_tensor_map<T: Float>(out: &mut Vec<u8>, map: &BTreeMap<String, Tensor<T>>) -> Result<()> {
    out.extend_from_slice(&(map.len() as u32).to_le_bytes());
    for (name, t) in map {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidArgument(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            let v = v.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

/// Little-endian byte reader with format errors on truncation.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated data at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub(crate) fn read_tensor_map<T: Float>(r: &mut Reader<'_>) -> Result<BTreeMap<String, Tensor<T>>> {
    let count = r.u32()?;
    let mut map = BTreeMap::new();
    let mut prev: Option<String> = None;
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        if prev.as_ref().is_some_and(|p| *p >= name) {
            return Err(Error::Format(format!("parameter {name} out of order")));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d));
        let n = n
            .filter(|n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| Error::Format(format!("parameter {name} larger than the file")))?;
        let raw = r.take(4 * n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        map.insert(name.clone(), Tensor::from_vec(&shape, data)?);
        prev = Some(name);
    }
    Ok(map)
}

impl<T: Float> Model<T> {
    /// Serializes to the checkpoint format (parameters stored as `f32`).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = self.hps();
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.push(SCAN_ORDER_ID);
        out.push(h.hps_id());
        out.push(h.lambda_index());
        out.extend_from_slice(&(h.block as u16).to_le_bytes());
        out.extend_from_slice(&(h.n as u32).to_le_bytes());
        out.extend_from_slice(&(h.m as u32).to_le_bytes());
        out.push(h.k2 as u8);
        out.extend_from_slice(&h.lambda.to_le_bytes());
        out.extend_from_slice(&self.seed().to_le_bytes());
        write_tensor_map(&mut out, self.params())?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.array::<4>()? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u8()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let scan = r.u8()?;
        if scan != SCAN_ORDER_ID {
            return Err(Error::Format(format!("unknown intra-block scan order {scan}")));
        }
        let hps_id = r.u8()?;
        let lambda_index = r.u8()?;
        let block = r.u16()? as usize;
        let n = r.u32()? as usize;
        let m = r.u32()? as usize;
        let k2 = r.u8()? as usize;
        let lambda = r.f64()?;
        let seed = r.u64()?;
        let hps = HyperParams::new(block, n, m, k2, lambda).map_err(|e| Error::Format(e.to_string()))?;
        if hps.hps_id() != hps_id || hps.lambda_index() != lambda_index {
            return Err(Error::Format("checkpoint header fields disagree".into()));
        }
        let params = read_tensor_map(&mut r)?;
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", r.remaining())));
        }
        Model::from_params(hps, seed, params)
    }

    /// Hash identifying this model in bitstream headers.
    pub fn checksum(&self) -> Result<u64> {
        Ok(checksum64(&self.to_bytes()?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
