//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic   8 bytes  "RDN2CKPT"
//! version u32
//! count   u32
//! count x { name_len u32, name utf-8, rank u32, dims u32 x rank, f32 x numel }
//! ```

use std::fs;
use std::path::Path;

use redim_tensor::Tensor;

use crate::error::{Error, Result};

use super::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"RDN2CKPT";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, store.len())?;
    for (name, p) in store.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, p.value.rank())?;
        for &d in p.value.shape() {
            put_u32(&mut out, d)?;
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
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
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).ok() != Some(&MAGIC[..]) {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        if store.contains(&name) {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        store.insert(name, tensor);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last parameter".into()));
    }
    Ok(store)
}

pub fn save(store: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(store)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
