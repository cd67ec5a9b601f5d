//! Flat little-endian grid files: `u32 frames, u32 cols, f32 fps`, then row-major `f32` cells.

use std::fs;
use std::path::Path;

use crst_core::{FeatureGrid, Grid};

use crate::error::{LabError, Result};

pub const GRID_HEADER_BYTES: usize = 12;

pub fn encode_grid(g: &Grid, fps: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(GRID_HEADER_BYTES + 4 * g.as_slice().len());
    out.extend_from_slice(&(g.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(g.cols() as u32).to_le_bytes());
    out.extend_from_slice(&(fps as f32).to_le_bytes());
    for &v in g.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8], path: &Path) -> Result<(Grid, f64)> {
    let bad = |msg: String| LabError::Data(format!("{}: {msg}", path.display()));
    if bytes.len() < GRID_HEADER_BYTES {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let frames = u32::from_le_bytes(word(0)) as usize;
    let cols = u32::from_le_bytes(word(4)) as usize;
    let fps = f32::from_le_bytes(word(8)) as f64;
    let expected = frames
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(GRID_HEADER_BYTES))
        .ok_or_else(|| bad("header dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes for {frames}x{cols}, found {}", bytes.len())));
    }
    let data = bytes[GRID_HEADER_BYTES..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    let grid = Grid::from_vec(frames, cols, data).map_err(|e| bad(e.to_string()))?;
    Ok((grid, fps))
}

pub fn write_grid(path: &Path, g: &Grid, fps: f64) -> Result<()> {
    fs::write(path, encode_grid(g, fps)).map_err(|e| LabError::io(path, e))
}

pub fn read_grid(path: &Path) -> Result<(Grid, f64)> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    decode_grid(&bytes, path)
}

pub fn read_features(path: &Path) -> Result<FeatureGrid> {
    let (g, fps) = read_grid(path)?;
    FeatureGrid::new(g, fps).map_err(|e| LabError::Data(format!("{}: {e}", path.display())))
}

/// Rounds every cell through `f32`, the precision grids are stored at.
pub fn quantize(g: &Grid) -> Grid {
    g.map(|v| v as f32 as f64)
}
