//! Flat named-tensor container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! b"VLWT"  count
//! repeated count times:
//!     name_len  name (UTF-8)  rank  extent * rank  f32 payload (product of extents)
//! ```

use std::fs;
use std::path::Path;

use vilavt_core::numerics::{ParamSet, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"VLWT";

/// Name of the step counter stored alongside checkpoint weights.
pub const STEP_KEY: &str = "meta.step";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::of(f64::from(v))).collect();
        Tensor::new(self.shape.clone(), data).expect("shape checked on read")
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ContainerError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("file ends inside {0}")]
    Truncated(&'static str),
    #[error("tensor name is not UTF-8")]
    BadName,
    #[error("tensor `{0}` has a zero extent")]
    ZeroExtent(String),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("duplicate tensor `{0}`")]
    Duplicate(String),
    #[error("missing tensor `{0}`")]
    Missing(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

pub fn encode(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &e in &t.shape {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&[u8], ContainerError> {
        let end = self.pos.checked_add(n).ok_or(ContainerError::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(ContainerError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ContainerError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>, ContainerError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| ContainerError::BadMagic)? != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let count = r.u32("count")?;
    let mut out: Vec<NamedTensor> = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| ContainerError::BadName)?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("extents")? as usize);
        }
        if shape.contains(&0) {
            return Err(ContainerError::ZeroExtent(name));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or(ContainerError::Truncated("payload"))?, "payload")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if out.iter().any(|t| t.name == name) {
            return Err(ContainerError::Duplicate(name));
        }
        out.push(NamedTensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(ContainerError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &[NamedTensor]) -> Result<(), crate::Error> {
    fs::write(path, encode(tensors)).map_err(|e| crate::Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<NamedTensor>, crate::Error> {
    let bytes = fs::read(path).map_err(|e| crate::Error::io(path, e))?;
    decode(&bytes).map_err(|e| crate::Error::format(path, e))
}

/// Every tensor of `params`, named `{prefix}{name}`.
pub fn from_params<T: Scalar>(prefix: &str, params: &ParamSet<T>) -> Vec<NamedTensor> {
    params
        .iter()
        .map(|(name, t)| NamedTensor::from_tensor(format!("{prefix}{name}"), t))
        .collect()
}

/// Overwrites every tensor of `params` from `tensors`; all must be present
/// with matching shapes.
pub fn into_params<T: Scalar>(prefix: &str, params: &mut ParamSet<T>, tensors: &[NamedTensor]) -> Result<(), ContainerError> {
    let names: Vec<String> = params.names().to_vec();
    for name in names {
        let key = format!("{prefix}{name}");
        let t = tensors
            .iter()
            .find(|t| t.name == key)
            .ok_or_else(|| ContainerError::Missing(key.clone()))?;
        let current = params.iter().find(|(n, _)| *n == name).map(|(_, t)| t.shape().to_vec()).expect("own name");
        if t.shape != current {
            return Err(ContainerError::Shape {
                name: key,
                expected: current,
                found: t.shape.clone(),
            });
        }
        params.set(&name, t.to_tensor()).expect("shape checked");
    }
    Ok(())
}

pub fn step_tensor(step: u64) -> NamedTensor {
    NamedTensor {
        name: STEP_KEY.into(),
        shape: vec![1],
        data: vec![step as f32],
    }
}

pub fn read_step(tensors: &[NamedTensor]) -> Option<u64> {
    tensors
        .iter()
        .find(|t| t.name == STEP_KEY)
        .and_then(|t| t.data.first())
        .map(|&v| v as u64)
}
