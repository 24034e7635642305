//! Model checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "FGSTCKPT"
//! version  u32      1
//! config   u32 length + UTF-8 TOML (the model configuration)
//! count    u32      number of parameter blobs
//! blob     repeated `count` times:
//!   name   u32 length + UTF-8
//!   dtype  u8       0 = f64, 1 = f32
//!   ndim   u32
//!   dims   ndim × u64
//!   data   prod(dims) values of `dtype`, little-endian
//! ```
//!
//! Reading an f32 blob widens it to f64. Blob order matches the order in
//! which the network registers its parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{put_string, put_u32, put_u64, to_u32, write_atomic, Cursor};
use crate::model::{Model, ModelConfig};
use crate::params::ParamSet;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FGSTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const WHAT: &str = "checkpoint";

/// Storage width of parameter blobs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F64,
    F32,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F64 => 0,
            Dtype::F32 => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F64),
            1 => Ok(Dtype::F32),
            other => Err(Error::format(WHAT, format!("unknown dtype tag {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Checkpoint {
            config: model.config().clone(),
            params: model.params.clone(),
        }
    }

    /// Rebuild the network from the stored configuration and load the
    /// stored values; every name and shape must match.
    pub fn into_model(self) -> Result<Model> {
        let mut model = Model::new(&self.config, 0)?;
        model.params.assign(&self.params)?;
        Ok(model)
    }

    pub fn encode(&self, dtype: Dtype) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.params.scalar_count() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_string(&mut out, &self.config.to_toml()?);
        put_u32(&mut out, to_u32(self.params.len(), "parameter count")?);
        for e in self.params.entries() {
            put_string(&mut out, &e.name);
            out.push(dtype.tag());
            put_u32(&mut out, to_u32(e.shape.len(), "parameter rank")?);
            for &d in &e.shape {
                put_u64(&mut out, d as u64);
            }
            match dtype {
                Dtype::F64 => e.value.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Dtype::F32 => e
                    .value
                    .iter()
                    .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes, WHAT);
        c.expect_magic(CHECKPOINT_MAGIC)?;
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(WHAT, format!("unsupported version {version}")));
        }
        let config = ModelConfig::from_toml(&c.string()?)?;
        let count = c.u32()?;
        let mut params = ParamSet::default();
        for _ in 0..count {
            let name = c.string()?;
            let dtype = Dtype::from_tag(c.u8()?)?;
            let ndim = c.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                let d = usize::try_from(c.u64()?)
                    .map_err(|_| Error::format(WHAT, "dimension exceeds address space"))?;
                shape.push(d);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format(WHAT, format!("shape {shape:?} overflows")))?;
            let value = match dtype {
                Dtype::F64 => c.f64s(numel)?,
                Dtype::F32 => c.f32s(numel)?.into_iter().map(f64::from).collect(),
            };
            params
                .insert(&name, &shape, value)
                .map_err(|e| Error::format(WHAT, e))?;
        }
        c.finish()?;
        Ok(Checkpoint { config, params })
    }

    pub fn write(&self, path: &Path, dtype: Dtype) -> Result<()> {
        write_atomic(path, &self.encode(dtype)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
