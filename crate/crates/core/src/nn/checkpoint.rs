//! Binary checkpoint format.
//!
//! Layout (little-endian): 8 magic bytes, `u32` format version, `u32`-prefixed
//! JSON metadata, `u32` tensor count, then per tensor a `u32`-prefixed UTF-8
//! name, `u32` rank, `u64` extents and raw `f32` data.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::params::ParamStore;
use super::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PEXSYNTH";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("truncated checkpoint")]
    Truncated,
    #[error("metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("invalid tensor record `{0}`")]
    BadTensor(String),
    #[error("missing tensor `{0}`")]
    Missing(String),
    #[error("unexpected tensor `{0}`")]
    Unexpected(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint kind is `{found}`, expected `{expected}`")]
    Kind { expected: String, found: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: ParamStore<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value, params: ParamStore<f32>) -> Self {
        Self { meta, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        let meta = serde_json::to_vec(&self.meta).expect("JSON value serializes");
        put_u32(&mut out, meta.len() as u32);
        out.extend_from_slice(&meta);
        put_u32(&mut out, self.params.len() as u32);
        for (name, t) in self.params.iter() {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape.len() as u32);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf };
        if r.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let meta_len = r.u32()? as usize;
        let meta: serde_json::Value = serde_json::from_slice(r.take(meta_len)?)?;
        let seed = meta.get("seed").and_then(serde_json::Value::as_u64).unwrap_or(0);
        let mut params = ParamStore::new(seed);
        let count = r.u32()?;
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::BadTensor("<non-utf8 name>".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| CheckpointError::BadTensor(name.clone()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|_| CheckpointError::BadTensor(name.clone()))?;
            if params.contains(&name) {
                return Err(CheckpointError::BadTensor(name));
            }
            params.insert(name, t);
        }
        if !r.buf.is_empty() {
            return Err(CheckpointError::BadTensor("<trailing bytes>".into()));
        }
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Checks that the stored tensors are exactly `expected` (names and shapes).
    pub fn validate(&self, expected: &[(String, Vec<usize>)]) -> Result<(), CheckpointError> {
        for (name, shape) in expected {
            let t = self.params.get(name).ok_or_else(|| CheckpointError::Missing(name.clone()))?;
            if &t.shape != shape {
                return Err(CheckpointError::Shape { name: name.clone(), expected: shape.clone(), found: t.shape.clone() });
            }
        }
        if let Some(extra) = self.params.names().find(|n| !expected.iter().any(|(e, _)| e == n)) {
            return Err(CheckpointError::Unexpected(extra.to_string()));
        }
        Ok(())
    }
}
