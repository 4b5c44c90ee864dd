//! Flat binary parameter checkpoints.
//!
//! Layout (little-endian): magic `DMCKPT01`, `u64` entry count, then per
//! entry `u32` name length, UTF-8 name, `u32` rank and `u64` dims; after the
//! header table come the row-major `f64` payloads in table order.

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DMCKPT01";

pub fn encode_checkpoint(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.total_len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
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

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u64()? as usize;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let mut params = ParamStore::new();
    for (name, shape) in table {
        let n: usize = shape.iter().product();
        let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.add(name, Tensor::new(shape, data)?);
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_little_endian() {
        let mut p = ParamStore::new();
        p.add("b", Tensor::row(vec![1.0]));
        let bytes = encode_checkpoint(&p);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..16], &1u64.to_le_bytes());
        assert_eq!(&bytes[16..20], &1u32.to_le_bytes());
        assert_eq!(bytes[20], b'b');
        assert_eq!(&bytes[bytes.len() - 8..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_truncation() {
        let mut p = ParamStore::new();
        p.add("w", Tensor::zeros(&[2, 2]));
        let bytes = encode_checkpoint(&p);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(b"nope").is_err());
    }

    proptest! {
        #[test]
        fn round_trip(values in prop::collection::vec(-1e6f64..1e6, 1..40), cols in 1usize..5) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let mut p = ParamStore::new();
            p.add("layer.0.w", Tensor::matrix(rows, cols, values[..rows * cols].to_vec()).unwrap());
            p.add("s", Tensor::scalar(values[0]));
            prop_assert_eq!(decode_checkpoint(&encode_checkpoint(&p)).unwrap(), p);
        }
    }
}
