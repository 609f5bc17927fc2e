use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform one-degree classes over [-90, 90]: class `j` is centered at
/// `j - 90` degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AngleBinning {
    /// Largest representable |angle| in whole degrees.
    pub half_range_deg: u32,
}

impl Default for AngleBinning {
    fn default() -> Self {
        AngleBinning { half_range_deg: 90 }
    }
}

impl AngleBinning {
    pub const DEFAULT_BINS: usize = 181;

    pub fn n_bins(&self) -> usize {
        2 * self.half_range_deg as usize + 1
    }

    pub fn min_deg(&self) -> f64 {
        -(self.half_range_deg as f64)
    }

    pub fn max_deg(&self) -> f64 {
        self.half_range_deg as f64
    }

    /// Rounds half away from zero, then shifts so that `-half_range` is 0.
    pub fn angle_to_class(&self, angle: f64) -> Result<usize> {
        if !angle.is_finite() || angle.abs() > self.max_deg() {
            return Err(Error::OutOfRange(angle));
        }
        // f64::round is half-away-from-zero.
        let idx = angle.round() as i64 + self.half_range_deg as i64;
        Ok(idx as usize)
    }

    pub fn class_to_angle(&self, index: usize) -> Result<f64> {
        if index >= self.n_bins() {
            return Err(Error::InvalidIndex(index));
        }
        Ok(index as f64 - self.half_range_deg as f64)
    }
}
