//! Binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            8 bytes  "VQAPARAM"
//! format_version   u32      (currently 1)
//! rng_seed         u64
//! count            u32
//! count × header:  name_len u32, name (UTF-8), dtype u8 (1 = f64),
//!                  flags u8 (bit 0 = requires_grad), ndim u32, dims u64 × ndim
//! count × payload: product(dims) × f64
//! ```
//!
//! Entries appear in lexicographic name order, matching `ParamStore`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VQAPARAM";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

/// JSON sidecar written next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    pub val_metric: f64,
    /// Model configuration, stored as free-form JSON so this module stays model-agnostic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<serde_json::Value>,
}

pub fn encode_params(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&params.rng_seed().to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.push(u8::from(t.requires_grad()));
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in params.iter() {
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
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Checkpoint {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!(
                "unexpected end of file (need {n} bytes, {} left)",
                self.bytes.len() - self.pos
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        r.pos = 0;
        return r.fail("bad magic");
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        r.pos -= 4;
        return r.fail(format!("unsupported format version {version}"));
    }
    let seed = r.u64()?;
    let count = r.u32()? as usize;
    let mut headers = Vec::with_capacity(count.min(1 << 16));
    let mut previous: Option<String> = None;
    for _ in 0..count {
        let name_at = r.pos;
        let len = r.u32()? as usize;
        let name = match std::str::from_utf8(r.take(len)?) {
            Ok(s) => s.to_string(),
            Err(_) => {
                r.pos = name_at;
                return r.fail("parameter name is not UTF-8");
            }
        };
        if previous.as_ref().is_some_and(|p| *p >= name) {
            r.pos = name_at;
            return r.fail(format!("parameter {name:?} out of order or duplicated"));
        }
        let dtype = r.u8()?;
        if dtype != DTYPE_F64 {
            r.pos -= 1;
            return r.fail(format!("unsupported dtype code {dtype}"));
        }
        let flags = r.u8()?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            let d = r.u64()?;
            if d == 0 {
                r.pos -= 8;
                return r.fail("zero-sized dimension");
            }
            shape.push(d as usize);
        }
        previous = Some(name.clone());
        headers.push((name, flags, shape));
    }
    let mut params = ParamStore::new(seed);
    for (name, flags, shape) in headers {
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let Some(n) = n.filter(|n| n.checked_mul(8).is_some()) else {
            return r.fail(format!("tensor {name:?} too large"));
        };
        let raw = r.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name.clone(), Tensor::from_parts(shape, data));
        if let Some(t) = params.get_mut(&name) {
            t.set_requires_grad(flags & 1 == 1);
        }
    }
    if r.pos != bytes.len() {
        return r.fail(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(params)
}

pub fn save_params(params: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_params(params))?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamStore> {
    decode_params(&fs::read(path)?)
}

pub fn save_meta(meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let mut s = serde_json::to_string_pretty(meta)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn load_meta(path: impl AsRef<Path>) -> Result<CheckpointMeta> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_store_round_trips() {
        let p = ParamStore::new(17);
        assert_eq!(decode_params(&encode_params(&p)).unwrap(), p);
    }

    #[test]
    fn single_matrix_round_trips() {
        let mut p = ParamStore::new(3);
        p.insert(
            "layer.w",
            Tensor::matrix(2, 3, vec![0.1, -2.5, 3.0, f64::MIN_POSITIVE, 1e300, -0.0]).unwrap(),
        );
        let back = decode_params(&encode_params(&p)).unwrap();
        assert_eq!(back, p);
        let bits: Vec<u64> = back.get("layer.w").unwrap().data().iter().map(|v| v.to_bits()).collect();
        let orig: Vec<u64> = p.get("layer.w").unwrap().data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, orig);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let mut p = ParamStore::new(3);
        p.insert("a", Tensor::vector(vec![1.0, 2.0]));
        let bytes = encode_params(&p);
        let cut = &bytes[..bytes.len() - 3];
        match decode_params(cut) {
            Err(Error::Checkpoint { offset, .. }) => assert_eq!(offset, bytes.len() - 16),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        assert!(matches!(
            decode_params(b"NOTMAGIC\x01\0\0\0"),
            Err(Error::Checkpoint { offset: 0, .. })
        ));
        let mut bytes = encode_params(&ParamStore::new(0));
        bytes.push(0);
        assert!(matches!(
            decode_params(&bytes),
            Err(Error::Checkpoint { offset: 24, .. })
        ));
    }
}
