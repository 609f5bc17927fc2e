//! BIWI layout: `<seq>/frame_NNNNN_rgb.png` beside `<seq>/frame_NNNNN_pose.txt`.
//! The pose file holds a row-major 3x3 rotation followed by a translation,
//! whitespace separated.

use std::collections::HashMap;

use nalgebra::Matrix3;
use walkdir::WalkDir;

use super::{lookup_box, relative_id, BoxSource, DatasetManifest, ImageSource, Sample};
use crate::error::{Error, Result};
use crate::geometry::{rotmat_to_euler, BoundingBox, HeadPose, RotationMatrix};

/// Annotated matrices are printed with limited precision; anything closer
/// than this to a rotation is projected onto SO(3) before decomposition.
const BIWI_ROTATION_TOL: f64 = 1e-3;

pub fn load_biwi_pose(text: &str) -> Result<HeadPose> {
    let ctx = "BIWI pose file";
    let values = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::parse(ctx, format!("not a number: {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() < 9 {
        return Err(Error::parse(ctx, format!("expected 9 rotation entries, found {}", values.len())));
    }
    if values[..9].iter().any(|v| !v.is_finite()) {
        return Err(Error::parse(ctx, "non-finite rotation entry"));
    }
    let m = Matrix3::from_row_slice(&values[..9]);
    RotationMatrix::with_tolerance(m, BIWI_ROTATION_TOL)?;
    let r = RotationMatrix::nearest(m)?;
    rotmat_to_euler(&r)
}

pub(super) fn load(manifest: &DatasetManifest, boxes: Option<&HashMap<String, BoundingBox>>) -> Result<Vec<Sample>> {
    let boxes = match (&manifest.box_source, boxes) {
        (BoxSource::PrecomputedFile(_), Some(b)) => b,
        _ => {
            return Err(Error::InvalidParameter(
                "BIWI has no landmark annotation; a precomputed box file is required".into(),
            ))
        }
    };
    let root = &manifest.root;
    let mut samples = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::load(root, e))?;
        let path = entry.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(stem) = name.strip_suffix("_pose.txt") else { continue };
        let image = path.with_file_name(format!("{stem}_rgb.png"));
        if !image.is_file() {
            continue;
        }
        let source_id = relative_id(root, path, "_pose.txt");
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e).for_sample(&source_id))?;
        let pose = load_biwi_pose(&text).map_err(|e| e.for_sample(&source_id))?;
        samples.push(Sample {
            bbox: lookup_box(boxes, &source_id)?,
            source_id,
            pose,
            image: ImageSource::File(image),
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::euler_to_rotmat;

    fn pose_file(pose: &HeadPose) -> String {
        let m = euler_to_rotmat(pose);
        let m = m.matrix();
        let mut s = String::new();
        for r in 0..3 {
            s.push_str(&format!("{} {} {}\n", m[(r, 0)], m[(r, 1)], m[(r, 2)]));
        }
        s.push_str("\n12.5 -3.25 910.0\n");
        s
    }

    #[test]
    fn identity_file() {
        let text = "1 0 0\n0 1 0\n0 0 1\n\n0 0 0\n";
        assert_eq!(load_biwi_pose(text).unwrap(), HeadPose::zero());
    }

    #[test]
    fn roundtrip_from_generated_file() {
        let pose = HeadPose::new(15.0, -30.0, 5.0).unwrap();
        let got = load_biwi_pose(&pose_file(&pose)).unwrap();
        for (a, b) in got.angles().iter().zip(pose.angles()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn low_precision_file_is_projected() {
        let pose = HeadPose::new(-40.0, 12.0, 25.0).unwrap();
        let m = euler_to_rotmat(&pose);
        let m = m.matrix();
        let text: String = (0..3)
            .map(|r| format!("{:.4} {:.4} {:.4}\n", m[(r, 0)], m[(r, 1)], m[(r, 2)]))
            .collect();
        let got = load_biwi_pose(&text).unwrap();
        for (a, b) in got.angles().iter().zip(pose.angles()) {
            assert!((a - b).abs() < 0.02);
        }
    }

    #[test]
    fn malformed_files() {
        assert!(matches!(load_biwi_pose("1 0 0\n0 1 0\n"), Err(Error::Parse { .. })));
        assert!(matches!(load_biwi_pose("1 0 0 0 1 0 0 0 x"), Err(Error::Parse { .. })));
        assert!(matches!(
            load_biwi_pose("1 0.1 0\n0 1 0\n0 0 1\n"),
            Err(Error::InvalidRotation(_))
        ));
    }
}
