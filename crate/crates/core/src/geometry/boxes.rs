use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square face box: top-left corner `(left, top)` and side length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub left: f64,
    pub top: f64,
    pub side: f64,
}

impl BoundingBox {
    pub fn new(left: f64, top: f64, side: f64) -> Result<Self> {
        if !(left.is_finite() && top.is_finite() && side.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "non-finite box ({left}, {top}, {side})"
            )));
        }
        if side <= 0.0 {
            return Err(Error::InvalidGeometry(format!("box side {side} must be positive")));
        }
        Ok(BoundingBox { left, top, side })
    }

    pub fn right(&self) -> f64 {
        self.left + self.side
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.side
    }

    pub fn center(&self) -> (f64, f64) {
        (self.left + 0.5 * self.side, self.top + 0.5 * self.side)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        BoundingBox {
            left: self.left + dx,
            top: self.top + dy,
            side: self.side,
        }
    }
}

/// Axis-aligned crop rectangle in source-image pixels. Coordinates may fall
/// outside the image; the uncovered area is zero-filled when sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropRegion {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl CropRegion {
    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }
}

/// Squares a detector box by growing its short side about the box center.
pub fn squarify_box(
    raw_left: f64,
    raw_top: f64,
    raw_width: f64,
    raw_height: f64,
) -> Result<BoundingBox> {
    if !(raw_width > 0.0 && raw_height > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "box extent {raw_width}x{raw_height} must be positive"
        )));
    }
    let side = raw_width.max(raw_height);
    let cx = raw_left + 0.5 * raw_width;
    let cy = raw_top + 0.5 * raw_height;
    BoundingBox::new(cx - 0.5 * side, cy - 0.5 * side, side)
}

/// Grows a square box by `k * side` on each of its four sides.
pub fn expand_margin(bbox: &BoundingBox, k: f64) -> Result<CropRegion> {
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::InvalidParameter(format!("margin K = {k} must be >= 0")));
    }
    let margin = k * bbox.side;
    Ok(CropRegion {
        left: bbox.left - margin,
        top: bbox.top - margin,
        right: bbox.left + bbox.side + margin,
        bottom: bbox.top + bbox.side + margin,
    })
}
