//! Binary field checkpoints, shared with the harness and any external
//! tooling.
//!
//! Layout: a 32-byte header — magic `PWF1` (4 bytes), `u32` little-endian
//! `m`, `u64` little-endian sample count, `f64` little-endian time stamp,
//! 8 reserved zero bytes — followed by `m³` `f64` little-endian values in
//! lexicographic order (x fastest).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};

pub const MAGIC: [u8; 4] = *b"PWF1";
pub const HEADER_LEN: usize = 32;

/// A field together with its checkpoint metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub field: ScalarField,
    pub sample_count: u64,
    pub time: f64,
}

pub fn write_checkpoint(path: &Path, field: &ScalarField, sample_count: u64, time: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&(field.grid().m() as u32).to_le_bytes())?;
    w.write_all(&sample_count.to_le_bytes())?;
    w.write_all(&time.to_le_bytes())?;
    w.write_all(&[0u8; 8])?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated header", path.display())))?;
    if header[0..4] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {:?}",
            path.display(),
            &header[0..4]
        )));
    }
    let m = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let sample_count = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let time = f64::from_le_bytes(header[16..24].try_into().unwrap());
    if header[24..32] != [0u8; 8] {
        return Err(Error::Checkpoint(format!(
            "{}: reserved header bytes are not zero",
            path.display()
        )));
    }
    let grid = GridSpec::new(m)
        .map_err(|_| Error::Checkpoint(format!("{}: bad grid size m = {m}", path.display())))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected = grid.len() * 8;
    if payload.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{}: bad length, expected {expected} payload bytes for m = {m}, got {}",
            path.display(),
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Checkpoint {
        field: ScalarField::from_values(grid, values),
        sample_count,
        time,
    })
}
