//! Desk-scale stand-in for the real datasets. Each image is a two-tone disc
//! on a dark background:
//! * the dividing line through the disc centre is rotated by `roll`,
//! * the red channel carries a horizontal shading ramp with slope ∝ `yaw`,
//! * the green channel carries a vertical ramp with slope ∝ `pitch`.
//!
//! Edges are anti-aliased so sub-degree pose changes still change pixels.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ImageSource, Sample};
use crate::archive::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, HeadPose};

pub const SYNTHETIC_POSE_RANGE_DEG: f64 = 60.0;
pub const DEFAULT_SYNTHETIC_SIDE: u32 = 96;
const MIN_SIDE: u32 = 16;
const BOX_FRACTION: f64 = 0.6;
const BACKGROUND: f64 = 24.0;
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEntry {
    pub id: String,
    pub file: PathBuf,
    pub pose: HeadPose,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub seed: u64,
    pub image_side: u32,
    pub samples: Vec<SyntheticEntry>,
}

fn centered_box(side: u32) -> BoundingBox {
    let s = side as f64 * BOX_FRACTION;
    let off = 0.5 * (side as f64 - s);
    BoundingBox::new(off, off, s).expect("positive side")
}

/// Renders one pose. The result depends only on `pose` and `side`.
pub fn render_synthetic(pose: &HeadPose, side: u32) -> RgbImage {
    let c = 0.5 * side as f64;
    let radius = 0.5 * BOX_FRACTION * side as f64;
    let (sin_r, cos_r) = pose.roll.to_radians().sin_cos();
    let gx = pose.yaw / SYNTHETIC_POSE_RANGE_DEG;
    let gy = pose.pitch / SYNTHETIC_POSE_RANGE_DEG;
    RgbImage::from_fn(side, side, |x, y| {
        let dx = x as f64 + 0.5 - c;
        let dy = y as f64 + 0.5 - c;
        let coverage = (radius - dx.hypot(dy) + 0.5).clamp(0.0, 1.0);
        // Signed distance to the rotated dividing line, ramped over one pixel.
        let split = (-dx * sin_r + dy * cos_r + 0.5).clamp(0.0, 1.0) * 2.0 - 1.0;
        let (xn, yn) = (dx / radius, dy / radius);
        let disc = [
            128.0 + 80.0 * gx * xn + 40.0 * split,
            128.0 + 80.0 * gy * yn + 40.0 * split,
            128.0 + 100.0 * split,
        ];
        let px = disc.map(|v| {
            let v = BACKGROUND + coverage * (v - BACKGROUND);
            v.round().clamp(0.0, 255.0) as u8
        });
        image::Rgb(px)
    })
}

fn sample_poses(n: usize, seed: u64) -> Vec<HeadPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(-SYNTHETIC_POSE_RANGE_DEG, SYNTHETIC_POSE_RANGE_DEG).expect("valid range");
    (0..n)
        .map(|_| {
            let yaw = u.sample(&mut rng);
            let pitch = u.sample(&mut rng);
            let roll = u.sample(&mut rng);
            HeadPose { yaw, pitch, roll }
        })
        .collect()
}

fn sample_id(i: usize) -> String {
    format!("{i:05}")
}

/// Fails if two poses more than 1 degree apart rendered to the same pixels.
fn check_injective(poses: &[HeadPose], images: &[RgbImage]) -> Result<()> {
    let mut seen: HashMap<u64, usize> = HashMap::new();
    for (i, img) in images.iter().enumerate() {
        let mut h = DefaultHasher::new();
        img.as_raw().hash(&mut h);
        if let Some(&j) = seen.get(&h.finish()) {
            let apart = poses[i]
                .angles()
                .iter()
                .zip(poses[j].angles())
                .any(|(a, b)| (a - b).abs() > 1.0);
            if apart && images[j].as_raw() == img.as_raw() {
                return Err(Error::InvalidInput(format!(
                    "synthetic samples {} and {} render identically",
                    sample_id(j),
                    sample_id(i)
                )));
            }
        } else {
            seen.insert(h.finish(), i);
        }
    }
    Ok(())
}

fn generate(n: usize, seed: u64, image_side: u32) -> Result<(Vec<HeadPose>, Vec<RgbImage>)> {
    if n < 1 {
        return Err(Error::InvalidParameter("synthetic dataset needs n >= 1".into()));
    }
    if image_side < MIN_SIDE {
        return Err(Error::InvalidParameter(format!(
            "synthetic image side {image_side} is below {MIN_SIDE}"
        )));
    }
    let poses = sample_poses(n, seed);
    let images: Vec<RgbImage> = poses.iter().map(|p| render_synthetic(p, image_side)).collect();
    check_injective(&poses, &images)?;
    Ok((poses, images))
}

/// In-memory samples; identical for identical arguments.
pub fn make_synthetic_dataset(n: usize, seed: u64, image_side: u32) -> Result<Vec<Sample>> {
    let (poses, images) = generate(n, seed, image_side)?;
    let bbox = centered_box(image_side);
    Ok(poses
        .into_iter()
        .zip(images)
        .enumerate()
        .map(|(i, (pose, img))| Sample {
            source_id: sample_id(i),
            pose,
            bbox,
            image: ImageSource::Memory(Arc::new(img)),
        })
        .collect())
}

/// Writes `images/<id>.png` plus `manifest.json` under `dir`.
pub fn write_synthetic_dataset(dir: &Path, n: usize, seed: u64, image_side: u32) -> Result<SyntheticManifest> {
    let (poses, images) = generate(n, seed, image_side)?;
    std::fs::create_dir_all(dir.join("images")).map_err(|e| Error::load(dir, e))?;
    let bbox = centered_box(image_side);
    let mut samples = Vec::with_capacity(n);
    for (i, (pose, img)) in poses.into_iter().zip(images).enumerate() {
        let id = sample_id(i);
        let file = PathBuf::from("images").join(format!("{id}.png"));
        let path = dir.join(&file);
        img.save(&path).map_err(|e| Error::load(&path, e))?;
        samples.push(SyntheticEntry { id, file, pose, bbox });
    }
    let manifest = SyntheticManifest {
        seed,
        image_side,
        samples,
    };
    write_atomic(&dir.join(MANIFEST_FILE), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        Ok(())
    })?;
    Ok(manifest)
}

pub fn load_synthetic_dataset(root: &Path) -> Result<Vec<Sample>> {
    let path = root.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::load(&path, e))?;
    let manifest: SyntheticManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    manifest
        .samples
        .into_iter()
        .map(|e| {
            let pose = HeadPose::new(e.pose.yaw, e.pose.pitch, e.pose.roll).map_err(|err| err.for_sample(&e.id))?;
            Ok(Sample {
                pose,
                bbox: e.bbox,
                image: ImageSource::File(root.join(&e.file)),
                source_id: e.id,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(s: &Sample) -> Vec<u8> {
        s.load_image().unwrap().as_raw().clone()
    }

    #[test]
    fn seeded_regeneration_is_identical() {
        let a = make_synthetic_dataset(4, 1, 64).unwrap();
        let b = make_synthetic_dataset(4, 1, 64).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pose, y.pose);
            assert_eq!(raw(x), raw(y));
        }
        let c = make_synthetic_dataset(4, 2, 64).unwrap();
        assert_ne!(a[0].pose, c[0].pose);
    }

    #[test]
    fn poses_in_range_and_box_centered() {
        let s = make_synthetic_dataset(200, 7, 100).unwrap();
        for x in &s {
            assert!(x.pose.angles().iter().all(|a| a.abs() < SYNTHETIC_POSE_RANGE_DEG));
            assert_eq!(x.bbox, BoundingBox::new(20.0, 20.0, 60.0).unwrap());
        }
    }

    #[test]
    fn one_degree_changes_pixels() {
        let base = HeadPose::new(10.0, -20.0, 30.0).unwrap();
        let img = render_synthetic(&base, 64);
        for k in 0..3 {
            let mut a = base.angles();
            a[k] += 1.0;
            assert_ne!(render_synthetic(&HeadPose::from_angles(a), 64), img, "angle {k}");
        }
    }

    #[test]
    fn shading_is_monotone_in_yaw() {
        // Mean red on the right half of the disc grows with yaw.
        let right_red = |yaw: f64| {
            let img = render_synthetic(&HeadPose::new(yaw, 0.0, 0.0).unwrap(), 64);
            (40..52).map(|x| img.get_pixel(x, 32)[0] as u32).sum::<u32>()
        };
        let vals: Vec<u32> = [-60.0, -20.0, 0.0, 20.0, 60.0].iter().map(|&y| right_red(y)).collect();
        assert!(vals.windows(2).all(|w| w[0] < w[1]), "{vals:?}");
    }

    #[test]
    fn invalid_arguments() {
        assert!(matches!(make_synthetic_dataset(0, 1, 64), Err(Error::InvalidParameter(_))));
        assert!(matches!(make_synthetic_dataset(1, 1, 4), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn disk_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_synthetic_dataset(dir.path(), 5, 3, 48).unwrap();
        assert_eq!(m.samples.len(), 5);
        assert_eq!(m.seed, 3);
        let loaded = load_synthetic_dataset(dir.path()).unwrap();
        let mem = make_synthetic_dataset(5, 3, 48).unwrap();
        for (a, b) in loaded.iter().zip(&mem) {
            assert_eq!(a.source_id, b.source_id);
            assert_eq!(a.pose, b.pose);
            assert_eq!(a.bbox, b.bbox);
            assert_eq!(raw(a), raw(b));
        }
    }
}
