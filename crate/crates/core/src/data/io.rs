//! `PGCB` dataset container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "PGCB" | u32 version | u32 count
//! per record:
//!   u16 H | u16 W | i32 census_tag
//!   f32 planes: 3 SAR, 10 optical | f32 lon | f32 lat | 4 label planes
//!   u8 latent flag (0 absent, 1 present) [+ 3 f32 latent planes]
//!   4 mask planes, 8 pixels per byte, row-major, first pixel in the high bit
//! u64 FNV-1a of every preceding byte
//! ```

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use thiserror::Error;

use super::record::{PatchRecord, N_LABELS, N_LATENTS, OPTICAL_CHANNELS, SAR_CHANNELS};

pub const MAGIC: [u8; 4] = *b"PGCB";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad magic bytes {0:?}, expected \"PGCB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported dataset version {found}, expected {VERSION}")]
    VersionMismatch { found: u32 },
    #[error("truncated payload: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("invalid latent flag {0}")]
    InvalidLatentFlag(u8),
    #[error("{0} trailing bytes after checksum")]
    TrailingBytes(usize),
    #[error("record {index} is malformed: {reason}")]
    Malformed { index: usize, reason: String },
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_mask(out: &mut Vec<u8>, m: &[bool]) {
    for chunk in m.chunks(8) {
        let mut b = 0u8;
        for (i, &bit) in chunk.iter().enumerate() {
            if bit {
                b |= 0x80 >> i;
            }
        }
        out.push(b);
    }
}

pub fn encode_dataset(records: &[PatchRecord]) -> Result<Vec<u8>, DatasetError> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(records.len()).map_err(|_| DatasetError::Malformed {
        index: records.len(),
        reason: "too many records".into(),
    })?;
    out.extend_from_slice(&count.to_le_bytes());
    for (index, r) in records.iter().enumerate() {
        r.validate_shape()
            .map_err(|reason| DatasetError::Malformed { index, reason })?;
        out.extend_from_slice(&(r.rows as u16).to_le_bytes());
        out.extend_from_slice(&(r.cols as u16).to_le_bytes());
        out.extend_from_slice(&r.census_tag.to_le_bytes());
        put_f32s(&mut out, &r.sar);
        put_f32s(&mut out, &r.optical);
        put_f32s(&mut out, &[r.lon, r.lat]);
        for l in &r.labels {
            put_f32s(&mut out, l);
        }
        match &r.latents {
            None => out.push(0),
            Some(planes) => {
                out.push(1);
                for p in planes {
                    put_f32s(&mut out, p);
                }
            }
        }
        for m in &r.masks {
            put_mask(&mut out, m);
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        if self.buf.len() - self.pos < n {
            return Err(DatasetError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.buf.len() - self.pos,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DatasetError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DatasetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, DatasetError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, DatasetError> {
        let bytes = self.take(n.checked_mul(4).ok_or(DatasetError::Truncated {
            offset: self.pos,
            needed: usize::MAX,
            available: self.buf.len() - self.pos,
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn mask(&mut self, n: usize) -> Result<Vec<bool>, DatasetError> {
        let bytes = self.take(n.div_ceil(8))?;
        Ok((0..n).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect())
    }
}

pub fn decode_dataset(buf: &[u8]) -> Result<Vec<PatchRecord>, DatasetError> {
    let mut c = Cursor { buf, pos: 0 };
    let magic: [u8; 4] = c.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(DatasetError::BadMagic(magic));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(DatasetError::VersionMismatch { found: version });
    }
    let count = c.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let rows = c.u16()? as usize;
        let cols = c.u16()? as usize;
        let census_tag = c.i32()?;
        let n = rows * cols;
        let sar = c.f32s(SAR_CHANNELS * n)?;
        let optical = c.f32s(OPTICAL_CHANNELS * n)?;
        let pos = c.f32s(2)?;
        let mut labels: [Vec<f32>; N_LABELS] = Default::default();
        for l in &mut labels {
            *l = c.f32s(n)?;
        }
        let latents = match c.u8()? {
            0 => None,
            1 => {
                let mut planes: [Vec<f32>; N_LATENTS] = Default::default();
                for p in &mut planes {
                    *p = c.f32s(n)?;
                }
                Some(planes)
            }
            f => return Err(DatasetError::InvalidLatentFlag(f)),
        };
        let mut masks: [Vec<bool>; N_LABELS] = Default::default();
        for m in &mut masks {
            *m = c.mask(n)?;
        }
        records.push(PatchRecord {
            rows,
            cols,
            sar,
            optical,
            lon: pos[0],
            lat: pos[1],
            labels,
            masks,
            latents,
            census_tag,
        });
    }
    let body_end = c.pos;
    let stored = c.u64()?;
    let computed = fnv1a(&buf[..body_end]);
    if stored != computed {
        return Err(DatasetError::ChecksumMismatch { stored, computed });
    }
    if c.pos != buf.len() {
        return Err(DatasetError::TrailingBytes(buf.len() - c.pos));
    }
    Ok(records)
}

pub fn write_dataset(records: &[PatchRecord], path: &Path) -> Result<(), DatasetError> {
    let bytes = encode_dataset(records)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<PatchRecord>, DatasetError> {
    let bytes = std::fs::read(path)?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PatchRecord {
        let mut r = PatchRecord::blank(3, 5);
        r.sar[4] = 1.5;
        r.optical[20] = -0.25;
        r.lon = 17.5;
        r.lat = -3.25;
        r.labels[2][7] = 410.0;
        r.masks[2][7] = true;
        r.masks[3][14] = true;
        r.census_tag = -12;
        r
    }

    #[test]
    fn round_trip_with_and_without_latents() {
        let mut b = sample();
        b.latents = Some([vec![1.0; 15], vec![2.0; 15], vec![f32::MIN_POSITIVE; 15]]);
        let recs = vec![sample(), b];
        let back = decode_dataset(&encode_dataset(&recs).unwrap()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let bytes = encode_dataset(&[]).unwrap();
        assert_eq!(&bytes[8..12], &0u32.to_le_bytes());
        assert!(decode_dataset(&bytes).unwrap().is_empty());
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode_dataset(&[sample()]).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(DatasetError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            decode_dataset(&bad),
            Err(DatasetError::VersionMismatch { found: 2 })
        ));
        let bad = &bytes[..bytes.len() - 20];
        assert!(matches!(decode_dataset(bad), Err(DatasetError::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[30] ^= 0x01;
        assert!(matches!(
            decode_dataset(&bad),
            Err(DatasetError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn mask_bits_are_msb_first() {
        let mut out = Vec::new();
        put_mask(&mut out, &[true, false, false, false, false, false, false, true, true]);
        assert_eq!(out, vec![0x81, 0x80]);
    }
}
