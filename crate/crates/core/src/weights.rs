//! Weight container and deterministic initialization.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NCSD"  u32 version  u32 config_len  config JSON (UTF-8)
//! u32 count
//! count × { u32 name_len  name  u8 dtype  u32 rank  rank × u64 extent  data }
//! ```
//!
//! dtype 0 is f32 and 1 is f64; data is row-major little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::config::ModelConfig;
use crate::error::{Error, LoadError, Result};
use crate::params::{param_specs, Init, Params};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"NCSD";
pub const VERSION: u32 = 1;
pub const INIT_STD: f64 = 0.02;

/// A tensor in the element type it is stored with.
#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn dtype(&self) -> DType {
        match self {
            StoredTensor::F32(_) => DType::F32,
            StoredTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for StoredTensor {
    fn from(t: Tensor<f32>) -> Self {
        StoredTensor::F32(t)
    }
}

impl From<Tensor<f64>> for StoredTensor {
    fn from(t: Tensor<f64>) -> Self {
        StoredTensor::F64(t)
    }
}

/// Named tensors plus the configuration they were created for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    config: ModelConfig,
    entries: BTreeMap<String, StoredTensor>,
}

impl ModelWeights {
    pub fn new(config: ModelConfig) -> Self {
        Self {
            config,
            entries: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn insert(&mut self, name: impl Into<String>, t: impl Into<StoredTensor>) -> Option<StoredTensor> {
        self.entries.insert(name.into(), t.into())
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.entries.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<StoredTensor> {
        self.entries.remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StoredTensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Converts every entry to `T` and checks the result against the config,
    /// naming the first missing or misshapen tensor.
    pub fn params<T: Scalar>(&self) -> Result<Params<T>> {
        let mut p = Params::new();
        for (name, t) in &self.entries {
            p.insert(name.clone(), t.to_tensor());
        }
        p.check(&self.config)?;
        Ok(p)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.config.to_json();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dtype().byte());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            match t {
                StoredTensor::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                StoredTensor::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        out
    }

    /// Parses a container. Every tensor must belong to the configured model
    /// with its exact shape; absent tensors are reported later by
    /// [`ModelWeights::params`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LoadError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(LoadError::BadMagic { found: magic });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(LoadError::UnsupportedVersion(version));
        }
        let cfg_len = r.u32("config length")? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len, "config block")?)
            .map_err(|_| LoadError::Config("not valid UTF-8".into()))?;
        let config = ModelConfig::from_json(cfg_text).map_err(|e| LoadError::Config(e.to_string()))?;
        let expected: BTreeMap<String, Vec<usize>> =
            param_specs(&config).into_iter().map(|s| (s.name, s.shape)).collect();

        let count = r.u32("tensor count")?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32("tensor name length")? as usize;
            let name_at = r.pos as u64;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| LoadError::BadName { offset: name_at })?
                .to_string();
            let dtype_at = r.pos as u64;
            let byte = r.take(1, &format!("dtype of tensor `{name}`"))?[0];
            let dtype = DType::from_byte(byte).ok_or_else(|| LoadError::UnknownDtype {
                name: name.clone(),
                byte,
                offset: dtype_at,
            })?;
            let rank = r.u32(&format!("rank of tensor `{name}`"))? as usize;
            if rank == 0 || rank > 8 {
                return Err(LoadError::BadExtents { name, extents: vec![] });
            }
            let mut extents = Vec::with_capacity(rank);
            for _ in 0..rank {
                extents.push(r.u64(&format!("extents of tensor `{name}`"))?);
            }
            let shape = checked_shape(&extents).ok_or_else(|| LoadError::BadExtents {
                name: name.clone(),
                extents: extents.clone(),
            })?;
            let Some(want) = expected.get(&name) else {
                return Err(LoadError::UnexpectedTensor(name));
            };
            if *want != shape {
                return Err(LoadError::ShapeMismatch {
                    name,
                    expected: want.clone(),
                    found: shape,
                });
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * dtype.size(), &format!("data of tensor `{name}`"))?;
            let t = match dtype {
                DType::F32 => StoredTensor::F32(Tensor::new(
                    shape,
                    raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                )
                .expect("validated shape")),
                DType::F64 => StoredTensor::F64(Tensor::new(
                    shape,
                    raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                )
                .expect("validated shape")),
            };
            if entries.insert(name.clone(), t).is_some() {
                return Err(LoadError::DuplicateTensor(name));
            }
        }
        let rest = bytes.len() - r.pos;
        if rest != 0 {
            return Err(LoadError::TrailingBytes(rest as u64));
        }
        Ok(Self { config, entries })
    }
}

fn checked_shape(extents: &[u64]) -> Option<Vec<usize>> {
    let mut total: usize = 1;
    let mut shape = Vec::with_capacity(extents.len());
    for &e in extents {
        let e = usize::try_from(e).ok().filter(|&e| e > 0)?;
        total = total.checked_mul(e)?;
        shape.push(e);
    }
    // guard the byte count too
    total.checked_mul(8)?;
    Some(shape)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], LoadError> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(LoadError::Truncated {
                offset: self.pos as u64,
                what: what.to_string(),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, LoadError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, LoadError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn save_weights(path: impl AsRef<Path>, w: &ModelWeights) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, w.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(ModelWeights::from_bytes(&bytes)?)
}

/// Deterministic f32 weights for `cfg` from a xoshiro256++ stream seeded with
/// `seed`. Parameters are drawn in canonical order.
pub fn init_weights(cfg: &ModelConfig, seed: u64) -> ModelWeights {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    // softplus(ln(e - 1)) = 1
    let unit_softplus = (std::f64::consts::E - 1.0).ln();
    let mut w = ModelWeights::new(cfg.clone());
    for spec in param_specs(cfg) {
        let n: usize = spec.shape.iter().product();
        let data: Vec<f32> = match spec.init {
            Init::Normal => (0..n).map(|_| normal.sample(&mut rng) as f32).collect(),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::TransitionBias { features } => (0..n)
                .map(|k| if k < features { 0.0 } else { unit_softplus as f32 })
                .collect(),
        };
        w.insert(spec.name, Tensor::new(spec.shape, data).expect("spec shapes are valid"));
    }
    w
}
