//! Crop a (possibly out-of-bounds) region, zero-fill outside the image and
//! resample to a square network input.
//!
//! Sampling model: output pixel `(u, v)` of an `S x S` patch reads the source
//! at pixel-center coordinates `left + (u + 0.5) * w / S - 0.5` (likewise for
//! rows). Points inside the image footprint `[-0.5, W - 0.5]` are bilinearly
//! interpolated with edge clamping; points outside it are exactly zero. The
//! padding therefore never blends into image content.
//!
//! Output layout is planar RGB (`C x H x W`), values `byte / 255` followed by
//! per-channel `(v - mean) / std`.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::CropRegion;
use crate::error::{Error, Result};

pub const DEFAULT_INPUT_SIDE: usize = 224;

/// Per-channel normalization applied after scaling to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelNorm {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl PixelNorm {
    pub const IDENTITY: PixelNorm = PixelNorm {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    /// ImageNet channel statistics used by the reference backbone weights.
    pub const IMAGENET: PixelNorm = PixelNorm {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|s| !(*s > 0.0) || !s.is_finite())
            || self.mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidParameter(format!("bad pixel normalization {self:?}")));
        }
        Ok(())
    }
}

impl Default for PixelNorm {
    fn default() -> Self {
        PixelNorm::IDENTITY
    }
}

/// Square planar RGB network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub side: usize,
    pub data: Vec<f32>,
}

impl Patch {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.side * self.side;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.side + y) * self.side + x]
    }
}

/// Source sample positions for each output index along one axis.
/// `None` marks positions outside the image footprint.
fn axis_taps(start: f64, extent: f64, out: usize, src_len: usize) -> Vec<Option<(usize, usize, f64)>> {
    let scale = extent / out as f64;
    let max = src_len as f64 - 0.5;
    (0..out)
        .map(|u| {
            let s = start + (u as f64 + 0.5) * scale - 0.5;
            if s < -0.5 || s > max {
                return None;
            }
            let s = s.clamp(0.0, (src_len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            Some((i0, i1, s - i0 as f64))
        })
        .collect()
}

pub fn crop_pad_resize(
    image: &RgbImage,
    region: &CropRegion,
    out_side: usize,
    norm: &PixelNorm,
) -> Result<Patch> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput("empty image".into()));
    }
    if !(region.width() > 0.0 && region.height() > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "crop region {region:?} has no area"
        )));
    }
    if out_side == 0 {
        return Err(Error::InvalidParameter("output side must be positive".into()));
    }
    let xs = axis_taps(region.left, region.width(), out_side, w as usize);
    let ys = axis_taps(region.top, region.height(), out_side, h as usize);

    let plane = out_side * out_side;
    let mut data = vec![0.0f32; 3 * plane];
    let raw = image.as_raw();
    let px = |x: usize, y: usize, c: usize| raw[(y * w as usize + x) * 3 + c] as f64 / 255.0;
    for (v, ty) in ys.iter().enumerate() {
        let Some((y0, y1, fy)) = *ty else { continue };
        for (u, tx) in xs.iter().enumerate() {
            let Some((x0, x1, fx)) = *tx else { continue };
            for c in 0..3 {
                let top = px(x0, y0, c) * (1.0 - fx) + px(x1, y0, c) * fx;
                let bot = px(x0, y1, c) * (1.0 - fx) + px(x1, y1, c) * fx;
                data[c * plane + v * out_side + u] = (top * (1.0 - fy) + bot * fy) as f32;
            }
        }
    }
    if *norm != PixelNorm::IDENTITY {
        for c in 0..3 {
            let (m, s) = (norm.mean[c], norm.std[c]);
            for v in &mut data[c * plane..(c + 1) * plane] {
                *v = (*v - m) / s;
            }
        }
    }
    Ok(Patch { side: out_side, data })
}
