//! Binary field records and persisted sample streams.
//!
//! A record is a 32-byte little-endian header (magic, version, d, N, L)
//! followed by the N^d site values as f64, last axis fastest. A stream file
//! is one JSON manifest line followed by back-to-back records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{FieldConfig, Grid};
use crate::sampler::ChainSummary;

pub const FIELD_MAGIC: [u8; 8] = *b"PHI4FLD\0";
pub const FIELD_VERSION: u32 = 1;

pub fn write_field<W: Write>(mut w: W, field: &FieldConfig) -> Result<()> {
    let g = field.grid();
    w.write_all(&FIELD_MAGIC)?;
    w.write_all(&FIELD_VERSION.to_le_bytes())?;
    w.write_all(&(g.dim() as u32).to_le_bytes())?;
    w.write_all(&(g.sites_per_side() as u64).to_le_bytes())?;
    w.write_all(&g.side_length().to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * field.values().len());
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_array<const K: usize, R: Read>(r: &mut R) -> Result<[u8; K]> {
    let mut b = [0u8; K];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Reads one record; `Ok(None)` at a clean end of input.
pub fn read_field_opt<R: Read>(mut r: R) -> Result<Option<FieldConfig>> {
    let mut magic = [0u8; 8];
    let mut got = 0;
    while got < 8 {
        let k = r.read(&mut magic[got..])?;
        if k == 0 {
            break;
        }
        got += k;
    }
    if got == 0 {
        return Ok(None);
    }
    if got < 8 || magic != FIELD_MAGIC {
        return Err(Error::Format("bad field record magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != FIELD_VERSION {
        return Err(Error::Format(format!("unsupported field version {version}")));
    }
    let d = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let l = f64::from_le_bytes(read_array(&mut r)?);
    let grid = Grid::new(d, n, l).map_err(|e| Error::Format(format!("record header: {e}")))?;
    let mut raw = vec![0u8; 8 * grid.num_sites()];
    r.read_exact(&mut raw)
        .map_err(|_| Error::Format("truncated field record".into()))?;
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    FieldConfig::new(grid, values).map(Some)
}

pub fn read_field<R: Read>(r: R) -> Result<FieldConfig> {
    read_field_opt(r)?.ok_or_else(|| Error::Format("empty input".into()))
}

pub fn save_field(path: impl AsRef<Path>, field: &FieldConfig) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<FieldConfig> {
    read_field(BufReader::new(File::open(path)?))
}

/// Header line of a persisted stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub grid: Grid,
    pub schedule: String,
    pub chain: ChainSummary,
    pub records: usize,
}

pub fn write_stream(path: impl AsRef<Path>, manifest: &StreamManifest, samples: &[FieldConfig]) -> Result<()> {
    if manifest.records != samples.len() {
        return Err(Error::LengthMismatch {
            expected: manifest.records,
            got: samples.len(),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, manifest).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    for s in samples {
        if s.grid() != &manifest.grid {
            return Err(Error::GridMismatch);
        }
        write_field(&mut w, s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<(StreamManifest, Vec<FieldConfig>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let manifest: StreamManifest =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let mut samples = Vec::with_capacity(manifest.records);
    while let Some(f) = read_field_opt(&mut r)? {
        if f.grid() != &manifest.grid {
            return Err(Error::GridMismatch);
        }
        samples.push(f);
    }
    if samples.len() != manifest.records {
        return Err(Error::LengthMismatch {
            expected: manifest.records,
            got: samples.len(),
        });
    }
    Ok((manifest, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let g = Grid::new(1, 3, 2.0).unwrap();
        let f = FieldConfig::new(g, vec![1.0, -0.5, 0.25]).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(buf.len(), 32 + 24);
        assert_eq!(&buf[..8], b"PHI4FLD\0");
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..24], &3u64.to_le_bytes());
        assert_eq!(read_field(&buf[..]).unwrap(), f);
    }

    #[test]
    fn corrupt_records_are_rejected() {
        let g = Grid::new(1, 3, 2.0).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &FieldConfig::zeros(g)).unwrap();
        assert!(read_field(&buf[..40]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_field(&bad[..]).is_err());
        let mut ver = buf.clone();
        ver[8] = 9;
        assert!(read_field(&ver[..]).is_err());
        assert!(read_field(&[][..]).is_err());
    }
}
