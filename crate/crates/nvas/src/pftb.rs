//! PFTB tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"PFTB"  u16 version (= 1)  u16 rank  rank × u64 dims  f32 data (row-major)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use nvas_core::encoders::{FeatureSource, FeatureVector};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"PFTB";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Format(format!("dims {dims:?} need {n} values, got {}", data.len())));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + 4 * t.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u16).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated tensor: {e}")))?;
    Ok(buf)
}

pub fn decode(mut r: impl Read) -> Result<Tensor> {
    if &take::<4>(&mut r)? != MAGIC {
        return Err(Error::Format("bad magic, expected PFTB".into()));
    }
    let version = u16::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported PFTB version {version}")));
    }
    let rank = u16::from_le_bytes(take(&mut r)?) as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(u64::from_le_bytes(take(&mut r)?) as usize);
    }
    let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| Error::Format("tensor too large".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::Format(e.to_string()))?;
    if bytes.len() != 4 * n {
        return Err(Error::Format(format!("expected {} data bytes, found {}", 4 * n, bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Tensor::new(dims, data)
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path).at(path)?;
    f.write_all(&encode(t)).at(path)
}

pub fn read(path: &Path) -> Result<Tensor> {
    decode(fs::File::open(path).at(path)?)
}

/// A feature vector read from disk along with the resize warning, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestedFeature {
    pub feature: FeatureVector,
    pub warning: Option<String>,
}

/// Reads a rank-1 tensor as a feature of width `dim`, truncating or
/// zero-padding (with a warning) when the stored length differs.
pub fn load_precomputed_features(path: &Path, tag: FeatureSource, dim: usize) -> Result<IngestedFeature> {
    let t = read(path)?;
    if t.rank() != 1 {
        return Err(Error::Format(format!("feature file must be rank 1, got rank {}", t.rank())));
    }
    if t.data.iter().any(|v| !v.is_finite()) {
        return Err(nvas_core::Error::NonFinite.into());
    }
    let mut values: Vec<f64> = t.data.iter().map(|&v| v as f64).collect();
    let warning = (values.len() != dim).then(|| {
        let msg = format!("{}: {} values resized to {dim}", path.display(), values.len());
        warn!("{msg}");
        msg
    });
    values.resize(dim, 0.0);
    Ok(IngestedFeature { feature: FeatureVector { values, source: tag }, warning })
}
