//! Discrete sampling grid over a rectangular survey area.
//!
//! The area is divided into square cells; every sample, prediction query and
//! navigation target lives on a cell center. Cell centers sit at integer
//! multiples of the cell pitch, so a 10 m x 15 m area at 1 m pitch has its
//! 150 centers on the integer coordinates (0..=9, 0..=14) and physically
//! spans [-0.5, 9.5] x [-0.5, 14.5].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A position in meters. Serialized compactly as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist_sq(&self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(&self, other: Point) -> f64 {
        self.dist_sq(other).sqrt()
    }
}

impl From<[f64; 2]> for Point {
    fn from(a: [f64; 2]) -> Self {
        Point { x: a[0], y: a[1] }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Integer cell coordinates: `ix` counts columns (x), `iy` counts rows (y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub ix: usize,
    pub iy: usize,
}

impl Cell {
    pub fn new(ix: usize, iy: usize) -> Self {
        Cell { ix, iy }
    }
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimensions must be positive, got {width} m x {height} m")]
    NonPositiveSize { width: f64, height: f64 },
    #[error("cell pitch must be positive, got {0} m")]
    NonPositivePitch(f64),
    #[error("grid extent {extent} m is not a whole number of {pitch} m cells")]
    PitchMisaligned { extent: f64, pitch: f64 },
}

/// Rectangular survey area divided into square cells of side `cell_pitch_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width_m: f64,
    pub height_m: f64,
    pub cell_pitch_m: f64,
}

impl GridSpec {
    pub fn new(width_m: f64, height_m: f64, cell_pitch_m: f64) -> Result<Self, GridError> {
        let spec = GridSpec {
            width_m,
            height_m,
            cell_pitch_m,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.cell_pitch_m > 0.0) {
            return Err(GridError::NonPositivePitch(self.cell_pitch_m));
        }
        if !(self.width_m > 0.0 && self.height_m > 0.0) {
            return Err(GridError::NonPositiveSize {
                width: self.width_m,
                height: self.height_m,
            });
        }
        for extent in [self.width_m, self.height_m] {
            let n = (extent / self.cell_pitch_m).round();
            if n < 1.0 || (n * self.cell_pitch_m - extent).abs() > 1e-9 * extent.max(1.0) {
                return Err(GridError::PitchMisaligned {
                    extent,
                    pitch: self.cell_pitch_m,
                });
            }
        }
        Ok(())
    }

    /// Number of cell columns.
    pub fn nx(&self) -> usize {
        (self.width_m / self.cell_pitch_m).round() as usize
    }

    /// Number of cell rows.
    pub fn ny(&self) -> usize {
        (self.height_m / self.cell_pitch_m).round() as usize
    }

    pub fn cell_count(&self) -> usize {
        self.nx() * self.ny()
    }

    /// Row-major index of a cell (rows are y, columns are x).
    pub fn cell_index(&self, cell: Cell) -> usize {
        cell.iy * self.nx() + cell.ix
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.nx(), index / self.nx())
    }

    pub fn cell_center(&self, cell: Cell) -> Point {
        Point::new(
            cell.ix as f64 * self.cell_pitch_m,
            cell.iy as f64 * self.cell_pitch_m,
        )
    }

    /// All cell centers in row-major order (matches `cell_index`).
    pub fn cell_centers(&self) -> Vec<Point> {
        let (nx, ny) = (self.nx(), self.ny());
        let mut centers = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                centers.push(self.cell_center(Cell::new(ix, iy)));
            }
        }
        centers
    }

    /// True if `p` lies inside the physical area covered by the cells.
    pub fn contains(&self, p: Point) -> bool {
        let half = self.cell_pitch_m / 2.0;
        p.x >= -half
            && p.x <= self.width_m - half
            && p.y >= -half
            && p.y <= self.height_m - half
    }

    /// Cell whose center is nearest to `p`, or `None` when `p` is outside the
    /// area. Points equidistant between two centers round half away from zero.
    pub fn nearest_cell(&self, p: Point) -> Option<Cell> {
        if !self.contains(p) {
            return None;
        }
        let ix = (p.x / self.cell_pitch_m).round().clamp(0.0, (self.nx() - 1) as f64);
        let iy = (p.y / self.cell_pitch_m).round().clamp(0.0, (self.ny() - 1) as f64);
        Some(Cell::new(ix as usize, iy as usize))
    }

    /// Diagonal of the survey area; used as an upper bound for fitted
    /// correlation lengths.
    pub fn diagonal(&self) -> f64 {
        (self.width_m * self.width_m + self.height_m * self.height_m).sqrt()
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            width_m: 10.0,
            height_m: 15.0,
            cell_pitch_m: 1.0,
        }
    }
}
