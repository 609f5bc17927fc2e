//! Coordinate and angle arithmetic: face boxes and their margin-expanded
//! crops, the degree binning used by the classification heads, and the
//! Euler convention used to ingest rotation-matrix annotations.

mod binning;
mod boxes;
mod crop;
mod rotation;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use binning::AngleBinning;
pub use boxes::{expand_margin, squarify_box, BoundingBox, CropRegion};
pub use crop::{crop_pad_resize, Patch, PixelNorm, DEFAULT_INPUT_SIDE};
pub use rotation::{euler_to_rotmat, rotmat_to_euler, RotationMatrix, GIMBAL_LOCK_PITCH_DEG};

/// Half-width of the evaluable angle range, in degrees.
pub const EVALUABLE_RANGE_DEG: f64 = 90.0;

/// Head orientation in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl HeadPose {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Result<Self> {
        let pose = HeadPose { yaw, pitch, roll };
        if !pose.angles().iter().all(|a| a.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite pose angle in {pose:?}")));
        }
        Ok(pose)
    }

    pub const fn zero() -> Self {
        HeadPose {
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
        }
    }

    /// Angles in head order: yaw, pitch, roll.
    pub fn angles(&self) -> [f64; 3] {
        [self.yaw, self.pitch, self.roll]
    }

    pub fn from_angles(angles: [f64; 3]) -> Self {
        HeadPose {
            yaw: angles[0],
            pitch: angles[1],
            roll: angles[2],
        }
    }

    pub fn get(&self, angle: Angle) -> f64 {
        self.angles()[angle.index()]
    }

    /// True iff every angle lies within `[-range_deg, range_deg]` (inclusive).
    pub fn is_within(&self, range_deg: f64) -> bool {
        self.angles().iter().all(|a| a.abs() <= range_deg)
    }

    pub fn is_evaluable(&self) -> bool {
        self.is_within(EVALUABLE_RANGE_DEG)
    }
}

/// One of the three predicted Euler angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Angle {
    Yaw,
    Pitch,
    Roll,
}

impl Angle {
    pub const ALL: [Angle; 3] = [Angle::Yaw, Angle::Pitch, Angle::Roll];

    pub fn index(self) -> usize {
        match self {
            Angle::Yaw => 0,
            Angle::Pitch => 1,
            Angle::Roll => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Angle::Yaw => "yaw",
            Angle::Pitch => "pitch",
            Angle::Roll => "roll",
        }
    }
}

impl std::fmt::Display for Angle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
