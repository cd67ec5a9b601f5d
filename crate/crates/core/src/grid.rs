//! Frame-major matrices and the label/feature types built on them.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// Dense `frames x cols` matrix stored row-major (one row per frame).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid {
    frames: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Model output: per-frame class probabilities in (0, 1).
pub type PosteriorGrid = Grid;

/// Frame-level soft targets in [0, 1] estimated from a teacher.
pub type PseudoLabelGrid = Grid;

impl Grid {
    pub fn zeros(frames: usize, cols: usize) -> Self {
        Grid { frames, cols, data: vec![0.0; frames * cols] }
    }

    pub fn filled(frames: usize, cols: usize, value: f64) -> Self {
        Grid { frames, cols, data: vec![value; frames * cols] }
    }

    pub fn from_vec(frames: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * cols {
            return Err(invalid(alloc::format!(
                "grid data length {} != {frames} x {cols}",
                data.len()
            )));
        }
        Ok(Grid { frames, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("ragged rows"));
        }
        Ok(Grid { frames: rows.len(), cols, data: rows.concat() })
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.cols)
    }

    #[inline]
    pub fn get(&self, frame: usize, col: usize) -> f64 {
        self.data[frame * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, frame: usize, col: usize, value: f64) {
        self.data[frame * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.cols..(frame + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, frame: usize) -> &mut [f64] {
        &mut self.data[frame * self.cols..(frame + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so empty-column grids yield nothing
        self.data.chunks_exact(self.cols.max(1)).take(if self.cols == 0 { 0 } else { self.frames })
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.frames).map(|t| self.get(t, col)).collect()
    }

    /// Per-column mean over frames (zeros for a frameless grid).
    pub fn column_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        if self.frames == 0 {
            return out;
        }
        for row in self.rows() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / self.frames as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid { frames: self.frames, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.shape() == other.shape()
    }

    /// Circular shift along frames: output frame `t` takes input frame `t - delay`.
    pub fn roll_frames(&self, delay: i64) -> Grid {
        let n = self.frames as i64;
        let mut out = Grid::zeros(self.frames, self.cols);
        if n == 0 {
            return out;
        }
        for t in 0..self.frames {
            let src = (t as i64 - delay).rem_euclid(n) as usize;
            out.row_mut(t).copy_from_slice(self.row(src));
        }
        out
    }

    /// Collapses consecutive groups of `factor` frames by maximum (trailing remainder dropped).
    pub fn max_pool_frames(&self, factor: usize) -> Grid {
        let factor = factor.max(1);
        let frames = self.frames / factor;
        let mut out = Grid::zeros(frames, self.cols);
        for t in 0..frames {
            for c in 0..self.cols {
                let m = (0..factor)
                    .map(|k| self.get(t * factor + k, c))
                    .fold(f64::NEG_INFINITY, f64::max);
                out.set(t, c, m);
            }
        }
        out
    }
}

/// `frames x channels` features with their frame rate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureGrid {
    pub data: Grid,
    pub fps: f64,
}

impl FeatureGrid {
    pub fn new(data: Grid, fps: f64) -> Result<Self> {
        if data.frames() == 0 {
            return Err(invalid("feature grid needs at least one frame"));
        }
        if !data.all_finite() {
            return Err(invalid("feature grid has non-finite entries"));
        }
        if !(fps > 0.0) {
            return Err(invalid("fps must be positive"));
        }
        Ok(FeatureGrid { data, fps })
    }

    pub fn frames(&self) -> usize {
        self.data.frames()
    }

    pub fn channels(&self) -> usize {
        self.data.cols()
    }
}

fn is_binary(v: f64) -> bool {
    v == 0.0 || v == 1.0
}

/// Frame-level binary activity, `frames x classes`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StrongLabelGrid(Grid);

impl StrongLabelGrid {
    pub fn new(data: Grid) -> Result<Self> {
        if !data.as_slice().iter().all(|&v| is_binary(v)) {
            return Err(invalid("strong labels must be 0 or 1"));
        }
        Ok(StrongLabelGrid(data))
    }

    pub fn zeros(frames: usize, classes: usize) -> Self {
        StrongLabelGrid(Grid::zeros(frames, classes))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn frames(&self) -> usize {
        self.0.frames()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    pub fn is_active(&self, frame: usize, class: usize) -> bool {
        self.0.get(frame, class) > 0.5
    }

    pub fn activate(&mut self, frame: usize, class: usize) {
        self.0.set(frame, class, 1.0);
    }
}

/// Clip-level binary class presence.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeakLabel(Vec<f64>);

impl WeakLabel {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if !data.iter().all(|&v| is_binary(v)) {
            return Err(invalid("weak labels must be 0 or 1"));
        }
        Ok(WeakLabel(data))
    }

    pub fn from_bools(present: &[bool]) -> Self {
        WeakLabel(present.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.0.get(class).is_some_and(|&v| v > 0.5)
    }
}
