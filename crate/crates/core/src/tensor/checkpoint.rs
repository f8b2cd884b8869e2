//! Versioned binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "GCAVCKPT"
//! version      u32
//! algorithm    u32 length + UTF-8
//! encoder      u32 length + UTF-8
//! count        u32
//! count × { name: u32 length + UTF-8, ndim: u32, dims: ndim × u64,
//!           values: product(dims) × f64 }
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GCAVCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint is for {found_algorithm}/{found_encoder}, expected {expected_algorithm}/{expected_encoder}")]
    IdMismatch {
        expected_algorithm: String,
        expected_encoder: String,
        found_algorithm: String,
        found_encoder: String,
    },
    #[error("parameter `{0}` missing from checkpoint")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub algorithm: String,
    pub encoder: String,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(algorithm: &str, encoder: &str, store: &ParamStore) -> Self {
        let params = store
            .iter()
            .map(|(_, n, t)| {
                let mut t = t.clone();
                t.zero_grad();
                (n.to_string(), t)
            })
            .collect();
        Self {
            algorithm: algorithm.into(),
            encoder: encoder.into(),
            params,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_str(&mut w, &self.algorithm)?;
        write_str(&mut w, &self.encoder)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, t) in &self.params {
            write_str(&mut w, name)?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let algorithm = read_str(&mut r)?;
        let encoder = read_str(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let ndim = read_u32(&mut r)? as usize;
            if ndim > 8 {
                return Err(CheckpointError::Malformed(format!("{name}: {ndim} dims")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            if n > 1 << 28 {
                return Err(CheckpointError::Malformed(format!("{name}: {n} values")));
            }
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            params.push((name, t));
        }
        Ok(Self {
            algorithm,
            encoder,
            params,
        })
    }

    pub fn check_ids(&self, algorithm: &str, encoder: &str) -> Result<(), CheckpointError> {
        if self.algorithm != algorithm || self.encoder != encoder {
            return Err(CheckpointError::IdMismatch {
                expected_algorithm: algorithm.into(),
                expected_encoder: encoder.into(),
                found_algorithm: self.algorithm.clone(),
                found_encoder: self.encoder.clone(),
            });
        }
        Ok(())
    }

    /// Copies every parameter of `store` from the checkpoint, by name.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let (_, src) = self
                .params
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| CheckpointError::MissingParam(name.clone()))?;
            let dst = store.get_mut(id);
            if src.shape() != dst.shape() {
                return Err(CheckpointError::ParamShape {
                    name,
                    expected: dst.shape().to_vec(),
                    found: src.shape().to_vec(),
                });
            }
            dst.data_mut().copy_from_slice(src.data());
            dst.zero_grad();
        }
        Ok(())
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, CheckpointError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(CheckpointError::Malformed(format!("string of {len} bytes")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| CheckpointError::Malformed(e.to_string()))
}
