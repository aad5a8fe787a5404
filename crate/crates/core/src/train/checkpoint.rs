//! Binary checkpoint files.
//!
//! Layout (little-endian): `b"DAUN"`, `u32` format version, `u64` iteration,
//! `f64` validation IoU, `u64` config fingerprint, then two tables
//! (parameters, optimizer velocities). Each table is a `u32` entry count
//! followed by entries of `u32` name length, UTF-8 name, four `u32`
//! dimensions and the `f32` payload.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use thiserror::Error;

use crate::arch::ModelConfig;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"DAUN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: corrupt checkpoint: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}: checkpoint format version {found}, this build reads version {expected}")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: checkpoint was written for config {found:016x}, current config is {expected:016x}")]
    Fingerprint { path: PathBuf, found: u64, expected: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub format_version: u32,
    pub iteration: u64,
    pub validation_metric: f64,
    pub fingerprint: u64,
    pub params: IndexMap<String, Tensor<f32>>,
    pub velocities: IndexMap<String, Tensor<f32>>,
}

fn put_table(out: &mut Vec<u8>, table: &IndexMap<String, Tensor<f32>>) {
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for (name, t) in table {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in t.shape().to_array() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("unexpected end of file at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, String> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, String> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, String> {
        self.array().map(f64::from_le_bytes)
    }

    fn table(&mut self) -> Result<IndexMap<String, Tensor<f32>>, String> {
        let n = self.u32()?;
        let mut table = IndexMap::new();
        for _ in 0..n {
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| "parameter name is not UTF-8".to_owned())?
                .to_owned();
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = self.u32()? as usize;
            }
            let shape = Shape::from(dims);
            let bytes = shape
                .numel()
                .checked_mul(4)
                .ok_or_else(|| format!("{name}: absurd shape {shape}"))?;
            let data = self
                .take(bytes)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            let t = Tensor::from_vec(shape, data).map_err(|e| e.to_string())?;
            if table.insert(name.clone(), t).is_some() {
                return Err(format!("duplicate entry {name}"));
            }
        }
        Ok(table)
    }
}

impl CheckpointRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.validation_metric.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        put_table(&mut out, &self.params);
        put_table(&mut out, &self.velocities);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, CheckpointError> {
        let corrupt = |reason: String| CheckpointError::Corrupt {
            path: path.to_owned(),
            reason,
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(corrupt)? != MAGIC {
            return Err(corrupt("missing DAUN magic".into()));
        }
        let format_version = r.u32().map_err(corrupt)?;
        if format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                path: path.to_owned(),
                found: format_version,
                expected: FORMAT_VERSION,
            });
        }
        let iteration = r.u64().map_err(corrupt)?;
        let validation_metric = r.f64().map_err(corrupt)?;
        let fingerprint = r.u64().map_err(corrupt)?;
        let params = r.table().map_err(corrupt)?;
        let velocities = r.table().map_err(corrupt)?;
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            format_version,
            iteration,
            validation_metric,
            fingerprint,
            params,
            velocities,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|e| CheckpointError::Io {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and checks that the file was written for `config`.
    pub fn load_for(path: &Path, config: &ModelConfig) -> Result<Self, CheckpointError> {
        let record = Self::load(path)?;
        let expected = config.fingerprint();
        if record.fingerprint != expected {
            return Err(CheckpointError::Fingerprint {
                path: path.to_owned(),
                found: record.fingerprint,
                expected,
            });
        }
        Ok(record)
    }
}
