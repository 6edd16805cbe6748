//! Synthetic ground-truth signal field.
//!
//! Received signal strength follows a log-distance path-loss law around a
//! transmitter: RSS(d) = RSS_d0 - 10 n log(d) + chi, where RSS_d0 is the
//! strength at the 1 m reference distance derived from the transmit power and
//! wavelength, n is the path-loss exponent and chi is zero-mean Gaussian
//! shadowing. The shadowing draw is frozen per cell when the field is
//! generated, so repeated measurements of a cell return the same value and a
//! trial is reproducible from its seed.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridSpec, Point};

/// Propagation speed used to derive the wavelength, in m/s.
pub const SPEED_OF_LIGHT_MPS: f64 = 3.0e8;

/// Distances below this are clamped before taking the logarithm, which gives
/// the transmitter cell a pronounced but finite peak.
pub const MIN_PATH_DISTANCE_M: f64 = 0.1;

/// Logarithm base of the path-loss law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    Natural,
    Base10,
}

impl LogBase {
    fn log(&self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Base10 => x.log10(),
        }
    }
}

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("field parameter {name} must be positive and finite, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("source ({x}, {y}) lies outside the grid")]
    SourceOutOfBounds { x: f64, y: f64 },
    #[error("measurement location ({x}, {y}) lies outside the grid")]
    MeasureOutOfBounds { x: f64, y: f64 },
}

/// Transmitter and propagation model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    /// Transmit power in dBm.
    pub tx_power_dbm: f64,
    /// Carrier frequency in Hz.
    pub frequency_hz: f64,
    /// Path-loss exponent n (3 indoors with obstructions, 2 in free space).
    pub path_loss_exponent: f64,
    /// Variance of the frozen per-cell shadowing term, in dBm^2.
    pub shadowing_variance: f64,
    /// Transmitter location in meters.
    pub source: Point,
    /// Logarithm base of the distance term.
    pub log_base: LogBase,
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams {
            tx_power_dbm: 27.0,
            frequency_hz: 2.4e9,
            path_loss_exponent: 3.0,
            shadowing_variance: 0.65,
            source: Point::new(4.0, 7.0),
            log_base: LogBase::Natural,
        }
    }
}

impl FieldParams {
    pub fn validate(&self) -> Result<(), FieldError> {
        // Transmit power may legitimately be zero or negative dBm; only
        // finiteness matters for it.
        if !self.tx_power_dbm.is_finite() {
            return Err(FieldError::InvalidParameter {
                name: "tx_power_dbm",
                value: self.tx_power_dbm,
            });
        }
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(FieldError::InvalidParameter {
                name: "frequency_hz",
                value: self.frequency_hz,
            });
        }
        if !(self.path_loss_exponent > 0.0 && self.path_loss_exponent.is_finite()) {
            return Err(FieldError::InvalidParameter {
                name: "path_loss_exponent",
                value: self.path_loss_exponent,
            });
        }
        if !(self.shadowing_variance >= 0.0 && self.shadowing_variance.is_finite()) {
            return Err(FieldError::InvalidParameter {
                name: "shadowing_variance",
                value: self.shadowing_variance,
            });
        }
        Ok(())
    }

    /// Signal strength at the reference distance of 1 m:
    /// TX power + 20 log(lambda / 4 pi).
    pub fn rss_at_reference(&self) -> f64 {
        let wavelength = SPEED_OF_LIGHT_MPS / self.frequency_hz;
        self.tx_power_dbm
            + 20.0 * self.log_base.log(wavelength / (4.0 * std::f64::consts::PI))
    }

    /// Noise-free mean signal strength at distance `d` meters from the
    /// source. Distances shorter than [`MIN_PATH_DISTANCE_M`] are clamped.
    pub fn rss_mean(&self, d: f64) -> f64 {
        let d = d.max(MIN_PATH_DISTANCE_M);
        self.rss_at_reference() - 10.0 * self.path_loss_exponent * self.log_base.log(d)
    }
}

/// A frozen realization of the signal field over a grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthField {
    pub grid: GridSpec,
    pub params: FieldParams,
    pub seed: u64,
    /// Per-cell values in row-major order (see `GridSpec::cell_index`).
    values: Vec<f64>,
}

/// Generates the field: per-cell mean from the path-loss law plus one frozen
/// shadowing draw per cell, in row-major cell order from a ChaCha stream
/// seeded with `seed`.
pub fn generate(
    grid: &GridSpec,
    params: &FieldParams,
    seed: u64,
) -> Result<GroundTruthField, FieldError> {
    params.validate()?;
    if !grid.contains(params.source) {
        return Err(FieldError::SourceOutOfBounds {
            x: params.source.x,
            y: params.source.y,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shadowing = Normal::new(0.0, params.shadowing_variance.sqrt())
        .expect("validated variance is non-negative");
    let values = grid
        .cell_centers()
        .iter()
        .map(|center| {
            params.rss_mean(center.dist(params.source)) + shadowing.sample(&mut rng)
        })
        .collect();
    Ok(GroundTruthField {
        grid: *grid,
        params: *params,
        seed,
        values,
    })
}

impl GroundTruthField {
    /// Frozen value of the cell nearest to `location`.
    pub fn measure(&self, location: Point) -> Result<f64, FieldError> {
        let cell = self
            .grid
            .nearest_cell(location)
            .ok_or(FieldError::MeasureOutOfBounds {
                x: location.x,
                y: location.y,
            })?;
        Ok(self.values[self.grid.cell_index(cell)])
    }

    /// All frozen values in row-major cell order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Noise-free path-loss component per cell, same order as `values`.
    pub fn noiseless(&self) -> Vec<f64> {
        self.grid
            .cell_centers()
            .iter()
            .map(|c| self.params.rss_mean(c.dist(self.params.source)))
            .collect()
    }

    /// Writes `x,y,value` rows (with header) in row-major cell order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x_m,y_m,rss_dbm")?;
        for (center, value) in self.grid.cell_centers().iter().zip(&self.values) {
            writeln!(w, "{},{},{}", center.x, center.y, value)?;
        }
        Ok(())
    }
}
