//! On-disk SDF grids: a fixed header then little-endian `f32` node values.
//!
//! ```text
//! magic  b"SWSDF\0\0\0"
//! u32    version
//! f64×3  origin
//! f64    cell
//! u64×3  dims (x fastest in the value array)
//! f32×n  values
//! ```

use std::path::Path;

use scenewalk_core::scene::SdfGrid;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SWSDF\0\0\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 24 + 8 + 24;

pub fn encode(grid: &SdfGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * grid.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for c in grid.origin {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&grid.cell.to_le_bytes());
    for d in grid.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &grid.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], src: &str) -> Result<SdfGrid> {
    let err = |offset: usize, msg: String| Error::Binary { src: src.to_string(), offset, msg };
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), format!("header needs {HEADER_LEN} bytes")));
    }
    if &bytes[..8] != MAGIC {
        return Err(err(0, "not an SDF cache".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(8);
    if version != VERSION {
        return Err(err(8, format!("unsupported version {version}")));
    }
    let origin = [f64_at(12), f64_at(20), f64_at(28)];
    let cell = f64_at(36);
    let dims64 = [u64_at(44), u64_at(52), u64_at(60)];
    let n = dims64
        .iter()
        .try_fold(1u64, |acc, d| acc.checked_mul(*d))
        .filter(|n| *n <= (bytes.len() / 4) as u64)
        .ok_or_else(|| err(44, format!("dims {dims64:?} exceed the file size")))? as usize;
    let expected = HEADER_LEN + 4 * n;
    if bytes.len() != expected {
        return Err(err(bytes.len().min(expected), format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let values = bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    let dims = dims64.map(|d| d as usize);
    Ok(SdfGrid::new(origin, cell, dims, values)?)
}

pub fn save(path: &Path, grid: &SdfGrid) -> Result<()> {
    std::fs::write(path, encode(grid)).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<SdfGrid> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode(&bytes, &path.display().to_string())
}
