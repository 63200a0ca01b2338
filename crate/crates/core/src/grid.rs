//! Grid geometry and dense real-valued grids.
//!
//! Axis convention: row 0 is the top of the map and rows grow downwards
//! (south); column 0 is the left edge and columns grow eastwards.

use crate::error::{Error, Result};

/// A `(row, col)` cell coordinate.
pub type Cell = (usize, usize);

/// Spatial discretisation of a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
    pub resolution_m: f64,
}

impl GridShape {
    pub const DEFAULT_RESOLUTION_M: f64 = 0.25;

    pub fn new(rows: usize, cols: usize, resolution_m: f64) -> Result<Self> {
        if rows < 3 || cols < 3 {
            return Err(Error::arg(format!(
                "grid must be at least 3x3, got {rows}x{cols}"
            )));
        }
        if !(resolution_m > 0.0 && resolution_m.is_finite()) {
            return Err(Error::arg(format!(
                "resolution must be positive, got {resolution_m}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            resolution_m,
        })
    }

    /// Square grid at the default 0.25 m resolution.
    pub fn square(size: usize) -> Result<Self> {
        Self::new(size, size, Self::DEFAULT_RESOLUTION_M)
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.0 < self.rows && cell.1 < self.cols
    }

    /// Moves `cell` by `(dr, dc)`, returning `None` when the result leaves the grid.
    pub fn offset(&self, cell: Cell, dr: i32, dc: i32) -> Option<Cell> {
        offset_within(self.rows, self.cols, cell, dr, dc)
    }
}

pub(crate) fn offset_within(rows: usize, cols: usize, cell: Cell, dr: i32, dc: i32) -> Option<Cell> {
    let r = cell.0 as i64 + dr as i64;
    let c = cell.1 as i64 + dc as i64;
    if r < 0 || c < 0 || r >= rows as i64 || c >= cols as i64 {
        None
    } else {
        Some((r as usize, c as usize))
    }
}

/// Single-channel dense grid of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "plane dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::arg("plane dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::arg(format!(
                "plane data has {} values, expected {}x{}={}",
                data.len(),
                rows,
                cols,
                rows * cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, (r, c): Cell) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, (r, c): Cell, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn max_abs_diff(&self, other: &Plane) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Multi-channel grid, channel-major then row-major. This is the in-memory
/// twin of the on-disk grid file.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::arg("grid dimensions must be positive"));
        }
        let expected = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::arg("grid dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::arg(format!(
                "grid data has {} values, expected {expected}",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            data,
        })
    }

    pub fn from_planes(planes: &[Plane]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::arg("need at least one plane"))?;
        let (rows, cols) = first.dims();
        let mut data = Vec::with_capacity(rows * cols * planes.len());
        for p in planes {
            if p.dims() != (rows, cols) {
                return Err(Error::arg("planes differ in shape"));
            }
            data.extend_from_slice(p.data());
        }
        Self::new(rows, cols, planes.len(), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn plane(&self, ch: usize) -> Plane {
        Plane {
            rows: self.rows,
            cols: self.cols,
            data: self.channel(ch).to_vec(),
        }
    }

    pub fn into_planes(self) -> Vec<Plane> {
        (0..self.channels).map(|ch| self.plane(ch)).collect()
    }
}

impl From<Plane> for Grid {
    fn from(p: Plane) -> Self {
        Grid {
            rows: p.rows,
            cols: p.cols,
            channels: 1,
            data: p.data,
        }
    }
}
