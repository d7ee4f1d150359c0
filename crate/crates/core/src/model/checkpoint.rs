//! `PGCK` checkpoint container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "PGCK" | u32 version | u32 parameter count
//! per parameter (sorted by name):
//!   u32 name length | name bytes (UTF-8) | u32 ndim | u64 dims | f64 payload
//! u32 config length | config JSON bytes
//! u64 epoch | f64 validation loss
//! u64 FNV-1a of every preceding byte
//! ```

use std::path::Path;

use tensorcore::Array;
use thiserror::Error;

use super::params::ModelParams;
use crate::data::io::fnv1a;

pub const MAGIC: [u8; 4] = *b"PGCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}, expected \"PGCK\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found}, expected {VERSION}")]
    VersionMismatch { found: u32 },
    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint config: {0}")]
    Config(#[from] serde_json::Error),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Parameters plus the configuration and selection point they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: serde_json::Value,
    pub epoch: u64,
    pub val_loss: f64,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&len32(self.params.len())?.to_le_bytes());
        for (name, a) in self.params.iter() {
            out.extend_from_slice(&len32(name.len())?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&len32(a.ndim())?.to_le_bytes());
            for &d in a.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let cfg = serde_json::to_vec(&self.config)?;
        out.extend_from_slice(&len32(cfg.len())?.to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.val_loss.to_le_bytes());
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut c = Cursor { buf, pos: 0 };
        let magic: [u8; 4] = c.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = c.u32()?;
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch { found: version });
        }
        if buf.len() < 8 + 8 {
            return Err(CheckpointError::Truncated {
                offset: buf.len(),
                needed: 8,
            });
        }
        let body = buf.len() - 8;
        let stored = u64::from_le_bytes(buf[body..].try_into().unwrap());
        let computed = fnv1a(&buf[..body]);
        if stored != computed {
            return Err(CheckpointError::ChecksumMismatch { stored, computed });
        }
        let mut c = Cursor {
            buf: &buf[..body],
            pos: c.pos,
        };
        let count = c.u32()? as usize;
        let mut params = ModelParams::new();
        for _ in 0..count {
            let n = c.u32()? as usize;
            let name = std::str::from_utf8(c.take(n)?)
                .map_err(|e| CheckpointError::Malformed(format!("parameter name: {e}")))?
                .to_string();
            let ndim = c.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(c.u64()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| CheckpointError::Malformed(format!("{name}: shape overflow")))?;
            let bytes = c.take(numel.checked_mul(8).ok_or_else(|| {
                CheckpointError::Malformed(format!("{name}: shape overflow"))
            })?)?;
            let data = bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let a = Array::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            params
                .insert(name, a)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        }
        let n = c.u32()? as usize;
        let config = serde_json::from_slice(c.take(n)?)?;
        let epoch = c.u64()?;
        let val_loss = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
        if c.pos != body {
            return Err(CheckpointError::Malformed(format!(
                "{} unexpected bytes before checksum",
                body - c.pos
            )));
        }
        Ok(Self {
            params,
            config,
            epoch,
            val_loss,
        })
    }

    /// FNV-1a checksum of the encoded file.
    pub fn checksum(&self) -> Result<u64, CheckpointError> {
        let bytes = self.encode()?;
        Ok(u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()))
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Self::decode(&std::fs::read(path)?)
    }
}

fn len32(n: usize) -> Result<u32, CheckpointError> {
    u32::try_from(n).map_err(|_| CheckpointError::Malformed(format!("length {n} exceeds u32")))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
