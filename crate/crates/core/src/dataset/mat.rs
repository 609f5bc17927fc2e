//! 300W-LP and AFLW2000 layout: `<name>.jpg` beside `<name>.mat`, where the
//! MAT-file holds `Pose_Para` (1x7, radians: pitch, yaw, roll, ...) and
//! landmarks `pt2d` (2x68) and/or `pt3d_68` (3x68).

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::{box_from_landmarks, lookup_box, relative_id, AdapterKind, BoxSource, DatasetManifest, ImageSource, Sample};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, HeadPose};

/// `(pitch, yaw, roll)` in radians to a pose in degrees.
pub fn load_pose_from_mat_params(pitch: f64, yaw: f64, roll: f64) -> Result<HeadPose> {
    if !(pitch.is_finite() && yaw.is_finite() && roll.is_finite()) {
        return Err(Error::parse("pose parameters", format!("non-finite value in ({pitch}, {yaw}, {roll})")));
    }
    HeadPose::new(yaw.to_degrees(), pitch.to_degrees(), roll.to_degrees())
}

fn doubles(array: &matfile::Array) -> Option<Vec<f64>> {
    use matfile::NumericData as N;
    Some(match array.data() {
        N::Double { real, .. } => real.clone(),
        N::Single { real, .. } => real.iter().map(|&v| v as f64).collect(),
        _ => return None,
    })
}

pub(super) struct Annotation {
    pub pose: HeadPose,
    pub landmarks: Vec<(f64, f64)>,
}

pub(super) fn read_annotation(path: &Path, prefer_3d: bool) -> Result<Annotation> {
    let ctx = path.display().to_string();
    let f = File::open(path).map_err(|e| Error::load(path, e))?;
    let mat = matfile::MatFile::parse(BufReader::new(f)).map_err(|e| Error::parse(&ctx, e.to_string()))?;
    let pose = mat
        .find_by_name("Pose_Para")
        .and_then(doubles)
        .ok_or_else(|| Error::parse(&ctx, "missing numeric Pose_Para"))?;
    if pose.len() < 3 {
        return Err(Error::parse(&ctx, format!("Pose_Para has {} values", pose.len())));
    }
    let pose = load_pose_from_mat_params(pose[0], pose[1], pose[2]).map_err(|e| Error::parse(&ctx, e.to_string()))?;

    let order: [&str; 2] = if prefer_3d { ["pt3d_68", "pt2d"] } else { ["pt2d", "pt3d_68"] };
    let landmarks = order
        .iter()
        .find_map(|name| {
            let a = mat.find_by_name(name)?;
            let rows = *a.size().first()?;
            let data = doubles(a)?;
            (rows >= 2).then(|| {
                // Column-major: point i occupies data[i * rows ..].
                data.chunks_exact(rows).map(|p| (p[0], p[1])).collect::<Vec<_>>()
            })
        })
        .unwrap_or_default();
    Ok(Annotation { pose, landmarks })
}

fn image_beside(mat_path: &Path) -> Option<PathBuf> {
    ["jpg", "png", "jpeg"]
        .iter()
        .map(|ext| mat_path.with_extension(ext))
        .find(|p| p.is_file())
}

pub(super) fn load(manifest: &DatasetManifest, boxes: Option<&HashMap<String, BoundingBox>>) -> Result<Vec<Sample>> {
    let root = &manifest.root;
    let prefer_3d = manifest.kind == AdapterKind::Aflw2000;
    let mut samples = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::load(root, e))?;
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().and_then(|e| e.to_str()) != Some("mat") {
            continue;
        }
        let Some(image) = image_beside(path) else { continue };
        let source_id = relative_id(root, path, ".mat");
        let ann = read_annotation(path, prefer_3d).map_err(|e| e.for_sample(&source_id))?;
        let bbox = match &manifest.box_source {
            BoxSource::PrecomputedFile(_) => lookup_box(boxes.expect("box file loaded"), &source_id)?,
            BoxSource::LandmarkExtent => {
                // AFLW2000 marks missing 2D landmarks with negative coordinates.
                let pts: Vec<_> = ann.landmarks.iter().copied().filter(|(x, y)| *x >= 0.0 && *y >= 0.0).collect();
                box_from_landmarks(&pts).map_err(|e| e.for_sample(&source_id))?
            }
            BoxSource::Embedded => {
                return Err(Error::InvalidParameter(
                    "300W-LP/AFLW2000 have no embedded boxes; use landmark-extent or a box file".into(),
                ))
            }
        };
        samples.push(Sample {
            source_id,
            pose: ann.pose,
            bbox,
            image: ImageSource::File(image),
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn radian_conversion() {
        assert_eq!(load_pose_from_mat_params(0.0, 0.0, 0.0).unwrap(), HeadPose::zero());
        assert_eq!(load_pose_from_mat_params(0.0, PI / 2.0, 0.0).unwrap().yaw, 90.0);
        // Oracle: deg = rad * 180 / pi, computed independently.
        let p = load_pose_from_mat_params(-0.3491, 0.7854, 0.1745).unwrap();
        let oracle = |r: f64| r * 180.0 / PI;
        assert!((p.pitch - oracle(-0.3491)).abs() < 1e-12);
        assert!((p.pitch + 20.0).abs() < 0.01);
        assert!((p.yaw - 45.0).abs() < 0.01);
        assert!((p.roll - 10.0).abs() < 0.01);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            load_pose_from_mat_params(f64::NAN, 0.0, 0.0),
            Err(Error::Parse { .. })
        ));
    }
}
