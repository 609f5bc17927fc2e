//! Dataset adapters. Every adapter yields [`Sample`]s: a lazily loaded image,
//! the ground-truth pose in degrees and a square face box.
//!
//! Pose conventions per adapter:
//! * 300W-LP / AFLW2000: `Pose_Para[0..3]` in the `.mat` annotation is
//!   (pitch, yaw, roll) in radians.
//! * BIWI: the 3x3 rotation in `*_pose.txt` is decomposed with
//!   [`crate::geometry::rotmat_to_euler`].
//! * synthetic: poses stored in degrees in `manifest.json`.

mod batches;
mod biwi;
mod box_file;
mod mat;
mod synthetic;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{squarify_box, BoundingBox, HeadPose, EVALUABLE_RANGE_DEG};

pub use batches::{iterate_batches, prepare_input, shuffled_order, Batch, BatchConfig, BatchStream};
pub use biwi::load_biwi_pose;
pub use box_file::{read_box_file, write_box_file, BoxRecord};
pub use mat::load_pose_from_mat_params;
pub use synthetic::{
    load_synthetic_dataset, make_synthetic_dataset, render_synthetic, write_synthetic_dataset, SyntheticEntry, SyntheticManifest,
    DEFAULT_SYNTHETIC_SIDE,
    SYNTHETIC_POSE_RANGE_DEG,
};

#[derive(Debug, Clone)]
pub enum ImageSource {
    Memory(Arc<RgbImage>),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub source_id: String,
    pub pose: HeadPose,
    pub bbox: BoundingBox,
    pub image: ImageSource,
}

impl Sample {
    /// Decodes the image; failures name the sample.
    pub fn load_image(&self) -> Result<Arc<RgbImage>> {
        match &self.image {
            ImageSource::Memory(img) => Ok(Arc::clone(img)),
            ImageSource::File(path) => image::open(path)
                .map(|img| Arc::new(img.to_rgb8()))
                .map_err(|e| Error::load(path, e).for_sample(&self.source_id)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdapterKind {
    #[serde(rename = "w300lp", alias = "300w-lp")]
    W300lp,
    Aflw2000,
    Biwi,
    Synthetic,
}

/// Where face boxes come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxSource {
    /// JSON-lines file from an external detector.
    PrecomputedFile(PathBuf),
    /// Squared extent of the annotated landmarks.
    LandmarkExtent,
    /// Boxes stored with the dataset itself (synthetic manifests).
    Embedded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub kind: AdapterKind,
    pub box_source: BoxSource,
    #[serde(default = "default_filter_range")]
    pub filter_range: f64,
}

fn default_filter_range() -> f64 {
    EVALUABLE_RANGE_DEG
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, kind: AdapterKind, box_source: BoxSource) -> Self {
        DatasetManifest {
            root: root.into(),
            kind,
            box_source,
            filter_range: EVALUABLE_RANGE_DEG,
        }
    }
}

/// Reads every sample listed by the adapter, in a stable (sorted) order.
/// Images are not decoded here.
pub fn load_samples(manifest: &DatasetManifest) -> Result<Vec<Sample>> {
    if !manifest.root.is_dir() {
        return Err(Error::load(&manifest.root, "dataset root is not a directory"));
    }
    let boxes = match &manifest.box_source {
        BoxSource::PrecomputedFile(path) => Some(read_box_file(path)?),
        _ => None,
    };
    match manifest.kind {
        AdapterKind::W300lp | AdapterKind::Aflw2000 => mat::load(manifest, boxes.as_ref()),
        AdapterKind::Biwi => biwi::load(manifest, boxes.as_ref()),
        AdapterKind::Synthetic => {
            let mut samples = load_synthetic_dataset(&manifest.root)?;
            if let Some(boxes) = &boxes {
                for s in &mut samples {
                    s.bbox = lookup_box(boxes, &s.source_id)?;
                }
            } else if manifest.box_source == BoxSource::LandmarkExtent {
                return Err(Error::InvalidParameter(
                    "synthetic datasets have no landmarks; use embedded or precomputed boxes".into(),
                ));
            }
            Ok(samples)
        }
    }
}

pub(crate) fn lookup_box(boxes: &std::collections::HashMap<String, BoundingBox>, id: &str) -> Result<BoundingBox> {
    boxes
        .get(id)
        .copied()
        .ok_or_else(|| Error::InvalidInput("no box in the box file".into()).for_sample(id))
}

/// Squared axis-aligned extent of the landmarks.
pub fn box_from_landmarks(points: &[(f64, f64)]) -> Result<BoundingBox> {
    if points.len() < 2 {
        return Err(Error::InvalidLandmarks(format!("need at least 2 points, got {}", points.len())));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidLandmarks("non-finite landmark".into()));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let (w, h) = (x1 - x0, y1 - y0);
    if w <= 0.0 && h <= 0.0 {
        return Err(Error::InvalidLandmarks("landmarks have zero extent".into()));
    }
    if w > 0.0 && h > 0.0 {
        return squarify_box(x0, y0, w, h);
    }
    // Collinear points: square on the non-degenerate axis.
    let side = w.max(h);
    BoundingBox::new(0.5 * (x0 + x1) - 0.5 * side, 0.5 * (y0 + y1) - 0.5 * side, side)
}

/// Keeps samples whose three angles all lie within `+/-range_deg`
/// (inclusive); returns the kept samples and the number dropped.
pub fn filter_evaluable(samples: Vec<Sample>, range_deg: f64) -> (Vec<Sample>, usize) {
    let before = samples.len();
    let kept: Vec<Sample> = samples.into_iter().filter(|s| s.pose.is_within(range_deg)).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// Path of `path` relative to `root` with the extension (or `suffix`) removed.
pub(crate) fn relative_id(root: &Path, path: &Path, suffix: &str) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    let s = rel.to_string_lossy().replace('\\', "/");
    match s.strip_suffix(suffix) {
        Some(stem) => stem.to_string(),
        None => s,
    }
}
