//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "XDOMCKPT"
//! version u32      1
//! then, per parameter, until end of file:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rank u32, dims u32 × rank
//!   data f32 × product(dims)
//! ```

use std::fs;
use std::path::Path;

use super::{ParamStore, Real, Result, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"XDOMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode_checkpoint<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + store.count() * 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for p in store.iter() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.tensor.shape().len() as u32).to_le_bytes());
        for &d in p.tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.tensor.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    buf
}

pub fn save_checkpoint<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(store))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(TensorError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Vec<CheckpointRecord>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    while r.pos < buf.len() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| TensorError::Checkpoint(format!("parameter name: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        records.push(CheckpointRecord { name, shape, data });
    }
    Ok(records)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointRecord>> {
    decode_checkpoint(&fs::read(path)?)
}

/// Overwrites `store` values from a checkpoint with identical names and shapes.
pub fn load_checkpoint<T: Real>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let records = read_checkpoint(path)?;
    if records.len() != store.len() {
        return Err(TensorError::Checkpoint(format!("{} records for {} parameters", records.len(), store.len())));
    }
    for (p, rec) in store.iter_mut().zip(records) {
        if p.name != rec.name || p.tensor.shape() != rec.shape.as_slice() {
            return Err(TensorError::Checkpoint(format!(
                "record {} {:?} does not match parameter {} {:?}",
                rec.name,
                rec.shape,
                p.name,
                p.tensor.shape()
            )));
        }
        for (dst, v) in p.tensor.data_mut().iter_mut().zip(rec.data) {
            *dst = T::cst(v as f64);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn layout_is_exact() {
        let mut s = ParamStore::<f32>::new();
        s.add("ab", Tensor::new(&[2], vec![1.0, -2.0]).unwrap());
        let bytes = encode_checkpoint(&s);
        let mut expect = b"XDOMCKPT".to_vec();
        expect.extend_from_slice(&[1, 0, 0, 0]);
        expect.extend_from_slice(&[2, 0, 0, 0, b'a', b'b']);
        expect.extend_from_slice(&[1, 0, 0, 0, 2, 0, 0, 0]);
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expect);
        assert_eq!(decode_checkpoint(&bytes).unwrap()[0].data, vec![1.0, -2.0]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode_checkpoint(b"NOTACKPT\x01\0\0\0").is_err());
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::zeros(&[3, 3]));
        let bytes = encode_checkpoint(&s);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn load_requires_matching_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::new(&[2, 2], vec![0.5, 1.5, -0.25, 3.0]).unwrap());
        save_checkpoint(&s, &path).unwrap();

        let mut same = ParamStore::<f64>::new();
        let id = same.add("w", Tensor::zeros(&[2, 2]));
        load_checkpoint(&mut same, &path).unwrap();
        assert_eq!(same.get(id).tensor.data(), &[0.5, 1.5, -0.25, 3.0]);

        let mut other = ParamStore::<f64>::new();
        other.add("w", Tensor::zeros(&[4]));
        assert!(load_checkpoint(&mut other, &path).is_err());
    }
}
