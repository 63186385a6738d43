//! Binary field snapshots: the `CHBF` format used for every on-disk field.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "CHBF" | u8 version = 1 | u32 nx | u32 ny | f64 lx | f64 ly | payload
//! ```
//!
//! A scalar file carries one `nx * ny` block of `f64` values right after the
//! header, row-major with x fastest (the in-memory layout of
//! [`ScalarField`]).  A vector file inserts a component-count byte (always 2)
//! after `ly`, followed by the two component blocks, x then y.  The reader
//! checks the exact file length, so truncated or padded files are rejected,
//! and `read(write(f))` reproduces `f` bit for bit, signed zeros and
//! subnormals included.

use std::path::Path;

use crate::error::{ChbError, Result};
use crate::grid::{Grid2D, ScalarField, VectorField};

const MAGIC: &[u8; 4] = b"CHBF";
const VERSION: u8 = 1;
/// Refuse absurd allocations from corrupt headers (800 MB of payload).
const MAX_CELLS: u64 = 100_000_000;

/// In-memory image of a scalar snapshot file.  Unlike [`ScalarField`] it
/// remembers the domain extents, so a file is self-describing.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSnapshot {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub data: Vec<f64>,
}

/// In-memory image of a vector snapshot file (two cell-centered components).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSnapshot {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl ScalarSnapshot {
    /// Snapshot of a field living on `grid`.
    pub fn of(grid: &Grid2D, f: &ScalarField) -> Self {
        ScalarSnapshot {
            nx: f.nx,
            ny: f.ny,
            lx: grid.lx,
            ly: grid.ly,
            data: f.data.clone(),
        }
    }

    /// Reinterprets the snapshot as a field on `grid`, rejecting shape or
    /// extent mismatches and non-finite values.
    pub fn field(&self, grid: &Grid2D) -> Result<ScalarField> {
        check_extents(grid, self.nx, self.ny, self.lx, self.ly)?;
        ScalarField::from_vec(grid, self.data.clone())
    }
}

impl VectorSnapshot {
    pub fn of(grid: &Grid2D, v: &VectorField) -> Self {
        VectorSnapshot {
            nx: v.x.nx,
            ny: v.x.ny,
            lx: grid.lx,
            ly: grid.ly,
            x: v.x.data.clone(),
            y: v.y.data.clone(),
        }
    }

    pub fn field(&self, grid: &Grid2D) -> Result<VectorField> {
        check_extents(grid, self.nx, self.ny, self.lx, self.ly)?;
        Ok(VectorField {
            x: ScalarField::from_vec(grid, self.x.clone())?,
            y: ScalarField::from_vec(grid, self.y.clone())?,
        })
    }
}

fn check_extents(grid: &Grid2D, nx: usize, ny: usize, lx: f64, ly: f64) -> Result<()> {
    if nx != grid.nx || ny != grid.ny {
        return Err(ChbError::config(format!(
            "snapshot is {nx} x {ny} but the run grid is {} x {}",
            grid.nx, grid.ny
        )));
    }
    let ok = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    if !ok(lx, grid.lx) || !ok(ly, grid.ly) {
        return Err(ChbError::config(format!(
            "snapshot domain {lx} x {ly} does not match the run domain {} x {}",
            grid.lx, grid.ly
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

fn header_bytes(nx: usize, ny: usize, lx: f64, ly: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(29);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(nx as u32).to_le_bytes());
    out.extend_from_slice(&(ny as u32).to_le_bytes());
    out.extend_from_slice(&lx.to_le_bytes());
    out.extend_from_slice(&ly.to_le_bytes());
    out
}

fn push_payload(out: &mut Vec<u8>, data: &[f64]) {
    out.reserve(8 * data.len());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes a scalar snapshot.
pub fn write_scalar(path: &Path, s: &ScalarSnapshot) -> Result<()> {
    if s.data.len() != s.nx * s.ny {
        return Err(ChbError::config(format!(
            "scalar snapshot claims {} x {} cells but holds {} values",
            s.nx,
            s.ny,
            s.data.len()
        )));
    }
    let mut bytes = header_bytes(s.nx, s.ny, s.lx, s.ly);
    push_payload(&mut bytes, &s.data);
    std::fs::write(path, bytes)
        .map_err(|e| ChbError::config(format!("cannot write {}: {e}", path.display())))
}

/// Writes a vector snapshot (component-count byte, then x and y blocks).
pub fn write_vector(path: &Path, v: &VectorSnapshot) -> Result<()> {
    let n = v.nx * v.ny;
    if v.x.len() != n || v.y.len() != n {
        return Err(ChbError::config(format!(
            "vector snapshot claims {} x {} cells but holds {} + {} values",
            v.nx,
            v.ny,
            v.x.len(),
            v.y.len()
        )));
    }
    let mut bytes = header_bytes(v.nx, v.ny, v.lx, v.ly);
    bytes.push(2); // component count
    push_payload(&mut bytes, &v.x);
    push_payload(&mut bytes, &v.y);
    std::fs::write(path, bytes)
        .map_err(|e| ChbError::config(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(ChbError::config(format!(
                "{} is truncated (needed {} bytes at offset {})",
                self.path.display(),
                n,
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_block(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Reads the shared header, returning `(nx, ny, lx, ly)`.
fn read_header(cur: &mut Cursor) -> Result<(usize, usize, f64, f64)> {
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(ChbError::config(format!(
            "{} is not a CHBF file (bad magic)",
            cur.path.display()
        )));
    }
    let version = cur.u8()?;
    if version != VERSION {
        return Err(ChbError::config(format!(
            "{} has unsupported CHBF version {version}",
            cur.path.display()
        )));
    }
    let nx = cur.u32()? as u64;
    let ny = cur.u32()? as u64;
    if nx == 0 || ny == 0 || nx * ny > MAX_CELLS {
        return Err(ChbError::config(format!(
            "{} has an implausible shape {nx} x {ny}",
            cur.path.display()
        )));
    }
    let lx = cur.f64()?;
    let ly = cur.f64()?;
    Ok((nx as usize, ny as usize, lx, ly))
}

fn finish(cur: &Cursor) -> Result<()> {
    if cur.pos != cur.bytes.len() {
        return Err(ChbError::config(format!(
            "{} has {} trailing bytes after the payload",
            cur.path.display(),
            cur.bytes.len() - cur.pos
        )));
    }
    Ok(())
}

/// Reads a scalar snapshot.
pub fn read_scalar(path: &Path) -> Result<ScalarSnapshot> {
    let bytes = std::fs::read(path)
        .map_err(|e| ChbError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    let (nx, ny, lx, ly) = read_header(&mut cur)?;
    let data = cur.f64_block(nx * ny)?;
    finish(&cur)?;
    Ok(ScalarSnapshot { nx, ny, lx, ly, data })
}

/// Reads a vector snapshot.
pub fn read_vector(path: &Path) -> Result<VectorSnapshot> {
    let bytes = std::fs::read(path)
        .map_err(|e| ChbError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    let (nx, ny, lx, ly) = read_header(&mut cur)?;
    let count = cur.u8()?;
    if count != 2 {
        return Err(ChbError::config(format!(
            "{} declares {count} components; vector files carry exactly 2",
            path.display()
        )));
    }
    let x = cur.f64_block(nx * ny)?;
    let y = cur.f64_block(nx * ny)?;
    finish(&cur)?;
    Ok(VectorSnapshot { nx, ny, lx, ly, x, y })
}

/// Writes a cell-centered scalar field that lives on `grid`.
pub fn write_scalar_field(path: &Path, grid: &Grid2D, f: &ScalarField) -> Result<()> {
    write_scalar(path, &ScalarSnapshot::of(grid, f))
}

/// Reads a scalar field expected to live on `grid`.
pub fn read_scalar_field(path: &Path, grid: &Grid2D) -> Result<ScalarField> {
    read_scalar(path)?.field(grid)
}

/// Writes a cell-centered vector field that lives on `grid`.
pub fn write_vector_field(path: &Path, grid: &Grid2D, v: &VectorField) -> Result<()> {
    write_vector(path, &VectorSnapshot::of(grid, v))
}

/// Reads a vector field expected to live on `grid`.
pub fn read_vector_field(path: &Path, grid: &Grid2D) -> Result<VectorField> {
    read_vector(path)?.field(grid)
}
