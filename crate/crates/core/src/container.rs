//! The `PLSM` container: magic bytes, a format version byte, a
//! little-endian `u64` header length, a JSON header, then every array as
//! little-endian `f64` values in header order. Datasets and checkpoints
//! share this layout.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub const MAGIC: &[u8; 4] = b"PLSM";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected \"PLSM\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("version mismatch: file has format {found}, this build reads {expected}")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("truncated payload: header describes {expected} bytes, file holds {actual}")]
    TruncatedPayload { expected: u64, actual: u64 },
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("array {name}: {source}")]
    Array { name: String, source: TensorError },
    #[error("expected a {expected} container, found {found}")]
    WrongKind { expected: String, found: String },
    #[error("missing array {0}")]
    MissingArray(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    format_version: u8,
    arrays: Vec<ArrayEntry>,
    meta: serde_json::Value,
}

/// In-memory form of a container file.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.arrays.push((name.into(), t));
    }

    pub fn array(&self, name: &str) -> Result<&Tensor, ContainerError> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| ContainerError::MissingArray(name.to_string()))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), ContainerError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(ContainerError::WrongKind {
                expected: kind.to_string(),
                found: self.kind.clone(),
            })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            format_version: FORMAT_VERSION,
            arrays: self
                .arrays
                .iter()
                .map(|(name, t)| ArrayEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let payload: usize = self.arrays.iter().map(|(_, t)| t.numel() * 8).sum();
        let mut out = Vec::with_capacity(13 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ContainerError::BadMagic(magic));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != FORMAT_VERSION {
            return Err(ContainerError::VersionMismatch {
                found: version[0],
                expected: FORMAT_VERSION,
            });
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > r.len() {
            return Err(ContainerError::TruncatedPayload {
                expected: len as u64,
                actual: r.len() as u64,
            });
        }
        let header: Header = serde_json::from_slice(&r[..len])?;
        let payload = &r[len..];
        let expected: usize = header
            .arrays
            .iter()
            .map(|a| a.shape.iter().product::<usize>() * 8)
            .sum();
        if expected != payload.len() {
            return Err(ContainerError::TruncatedPayload {
                expected: expected as u64,
                actual: payload.len() as u64,
            });
        }
        let mut offset = 0;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let n: usize = entry.shape.iter().product();
            let data = payload[offset..offset + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            offset += n * 8;
            let t = Tensor::new(entry.shape, data).map_err(|source| ContainerError::Array {
                name: entry.name.clone(),
                source,
            })?;
            arrays.push((entry.name, t));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
