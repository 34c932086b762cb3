//! Model checkpoints.
//!
//! ```text
//! b"PFCK"  u16 version (= 1)
//! u32 config_len  config text (key = value lines)
//! u32 n_tensors
//! per tensor: u16 name_len  name  u64 len  len × f64
//! ```
//! All integers and floats are little-endian. Tensors are written in the
//! model's visit order and stored at full precision.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nvas_core::model::PhysModel;
use nvas_core::nn::Parameters;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"PFCK";
pub const VERSION: u16 = 1;

pub fn encode(cfg: &TrainConfig, model: &PhysModel) -> Vec<u8> {
    let text = cfg.to_text();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let mut tensors = Vec::new();
    model.visit("", &mut |name, data| tensors.push((name.to_string(), data.to_vec())));
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, data) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn text(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.bytes(n)?.to_vec()).map_err(|_| Error::Format("checkpoint text is not UTF-8".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(TrainConfig, PhysModel)> {
    let mut c = Cursor(bytes);
    if c.bytes(4)? != MAGIC {
        return Err(Error::Format("bad magic, expected PFCK".into()));
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n = c.u32()? as usize;
    let cfg = TrainConfig::from_text(&c.text(n)?)?;
    let mut stored = BTreeMap::new();
    for _ in 0..c.u32()? {
        let n = c.u16()? as usize;
        let name = c.text(n)?;
        let len = c.u64()? as usize;
        let raw = c.bytes(len.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        stored.insert(name, data);
    }
    if !c.0.is_empty() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    // Shapes come from the config; values come from the file.
    let mut model = PhysModel::new(&cfg.model, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut problem = None;
    model.visit_mut("", &mut |name, data| match stored.remove(name) {
        Some(v) if v.len() == data.len() => data.copy_from_slice(&v),
        Some(v) => problem = Some(format!("tensor `{name}` has {} values, expected {}", v.len(), data.len())),
        None => problem = Some(format!("tensor `{name}` missing")),
    });
    if let Some(extra) = stored.keys().next() {
        problem.get_or_insert(format!("unexpected tensor `{extra}`"));
    }
    match problem {
        Some(p) => Err(Error::Format(p)),
        None => Ok((cfg, model)),
    }
}

pub fn save(path: &Path, cfg: &TrainConfig, model: &PhysModel) -> Result<()> {
    fs::write(path, encode(cfg, model)).at(path)
}

pub fn load(path: &Path) -> Result<(TrainConfig, PhysModel)> {
    decode(&fs::read(path).at(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nvas_core::model::ModelConfig;

    fn small() -> TrainConfig {
        TrainConfig {
            model: ModelConfig { feature_dim: 4, adapter_hidden: 3, trunk_hidden: vec![5], bands: 2, n_views: 2, rays_per_view: 3 },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn round_trip() {
        let cfg = small();
        let model = PhysModel::new(&cfg.model, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let bytes = encode(&cfg, &model);
        let (c2, m2) = decode(&bytes).unwrap();
        assert_eq!((c2, &m2), (cfg.clone(), &model));
        assert_eq!(encode(&cfg, &m2), bytes);
    }

    #[test]
    fn detects_damage() {
        let cfg = small();
        let model = PhysModel::new(&cfg.model, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let bytes = encode(&cfg, &model);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut other = cfg.clone();
        other.model.trunk_hidden = vec![6];
        let wrong = encode(&other, &PhysModel::new(&other.model, &mut ChaCha8Rng::seed_from_u64(1)).unwrap());
        // Header of `cfg` followed by tensors shaped for `other`.
        let text = other.to_text();
        let pos = 10 + text.len();
        let mut mixed = bytes[..10].to_vec();
        mixed.extend_from_slice(cfg.to_text().as_bytes());
        mixed.extend_from_slice(&wrong[pos..]);
        assert!(decode(&mixed).is_err());
    }
}
