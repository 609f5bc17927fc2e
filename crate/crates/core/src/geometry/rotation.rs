//! Euler convention: intrinsic yaw -> pitch -> roll,
//! `R = Ry(yaw) * Rx(pitch) * Rz(roll)` with x lateral, y vertical and
//! z along the optical axis. All angles in degrees at the API boundary.

use nalgebra::Matrix3;

use super::HeadPose;
use crate::error::{Error, Result};

/// |pitch| at or beyond which yaw and roll are no longer separable.
pub const GIMBAL_LOCK_PITCH_DEG: f64 = 89.9;

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    /// Accepts `m` if it is a proper rotation within `1e-6`.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        Self::with_tolerance(m, ORTHONORMAL_TOL)
    }

    pub fn with_tolerance(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let dev = orthonormality_error(&m);
        if !dev.is_finite() || dev > tol {
            return Err(Error::InvalidRotation(format!(
                "deviation from a proper rotation is {dev:.3e} (tolerance {tol:.0e})"
            )));
        }
        Ok(RotationMatrix(m))
    }

    /// Projects a near-rotation onto SO(3) (polar decomposition).
    pub fn nearest(m: Matrix3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::InvalidRotation("SVD failed".into())),
        };
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Self::new(r)
    }

    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Max-abs deviation of `m^T m` from identity, combined with `|det - 1|`.
pub(crate) fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    let gram = m.transpose() * m - Matrix3::identity();
    let off = gram.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    off.max((m.determinant() - 1.0).abs())
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn euler_to_rotmat(pose: &HeadPose) -> RotationMatrix {
    let m = rot_y(pose.yaw.to_radians()) * rot_x(pose.pitch.to_radians()) * rot_z(pose.roll.to_radians());
    RotationMatrix(m)
}

/// Inverse of [`euler_to_rotmat`].
///
/// Near gimbal lock the decomposition is not unique; the error carries the
/// canonical resolution with roll fixed to 0.
pub fn rotmat_to_euler(r: &RotationMatrix) -> Result<HeadPose> {
    let m = r.matrix();
    let dev = orthonormality_error(m);
    if !dev.is_finite() || dev > ORTHONORMAL_TOL {
        return Err(Error::InvalidRotation(format!(
            "deviation from a proper rotation is {dev:.3e}"
        )));
    }
    // Row 1 is (cos p sin r, cos p cos r, -sin p).
    let cos_pitch = m[(1, 0)].hypot(m[(1, 1)]);
    let pitch = (-m[(1, 2)]).atan2(cos_pitch);
    if pitch.to_degrees().abs() >= GIMBAL_LOCK_PITCH_DEG {
        // With roll = 0: R00 = cos y, R20 = -sin y.
        let yaw = (-m[(2, 0)]).atan2(m[(0, 0)]);
        return Err(Error::DegenerateDecomposition {
            resolved: HeadPose {
                yaw: yaw.to_degrees(),
                pitch: pitch.to_degrees(),
                roll: 0.0,
            },
        });
    }
    let roll = m[(1, 0)].atan2(m[(1, 1)]);
    let yaw = m[(0, 2)].atan2(m[(2, 2)]);
    Ok(HeadPose {
        yaw: yaw.to_degrees(),
        pitch: pitch.to_degrees(),
        roll: roll.to_degrees(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_pose_err(a: &HeadPose, b: &HeadPose) -> f64 {
        a.angles()
            .iter()
            .zip(b.angles())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_pose_is_identity() {
        let r = euler_to_rotmat(&HeadPose::zero());
        assert_eq!(*r.matrix(), Matrix3::identity());
        let p = rotmat_to_euler(&RotationMatrix::identity()).unwrap();
        assert_eq!(p, HeadPose::zero());
    }

    #[test]
    fn pure_yaw_is_rotation_about_vertical_axis() {
        let r = euler_to_rotmat(&HeadPose::new(30.0, 0.0, 0.0).unwrap());
        let m = r.matrix();
        let (s, c) = 30f64.to_radians().sin_cos();
        let expected = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        assert!((m - expected).abs().max() < 1e-15);
        // The vertical axis is fixed.
        let y = m * nalgebra::Vector3::y();
        assert!((y - nalgebra::Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn roundtrip_example() {
        let pose = HeadPose::new(10.0, -20.0, 35.0).unwrap();
        let back = rotmat_to_euler(&euler_to_rotmat(&pose)).unwrap();
        assert!(max_pose_err(&pose, &back) < 1e-6);
    }

    #[test]
    fn gimbal_lock_resolves_roll_to_zero() {
        let pose = HeadPose::new(20.0, 90.0, 15.0).unwrap();
        match rotmat_to_euler(&euler_to_rotmat(&pose)) {
            Err(Error::DegenerateDecomposition { resolved }) => {
                assert_eq!(resolved.roll, 0.0);
                assert!((resolved.pitch - 90.0).abs() < 1e-6);
                // Same rotation as the input.
                let a = euler_to_rotmat(&resolved);
                let b = euler_to_rotmat(&pose);
                assert!((a.matrix() - b.matrix()).abs().max() < 1e-6);
            }
            other => panic!("expected degenerate decomposition, got {other:?}"),
        }
    }

    #[test]
    fn non_orthonormal_rejected() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(RotationMatrix::new(m), Err(Error::InvalidRotation(_))));
        assert!(matches!(
            rotmat_to_euler(&RotationMatrix(m)),
            Err(Error::InvalidRotation(_))
        ));
        // Reflection: orthogonal but det = -1.
        let refl = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RotationMatrix::new(refl).is_err());
    }

    #[test]
    fn nearest_projects_perturbed_matrix() {
        let pose = HeadPose::new(15.0, -30.0, 5.0).unwrap();
        let m = euler_to_rotmat(&pose).matrix() + Matrix3::from_element(2e-4);
        let r = RotationMatrix::nearest(m).unwrap();
        assert!(orthonormality_error(r.matrix()) < 1e-12);
        let back = rotmat_to_euler(&r).unwrap();
        assert!(max_pose_err(&pose, &back) < 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn roundtrip_off_gimbal_lock(y in -89.0..89.0f64, p in -89.0..89.0f64, r in -89.0..89.0f64) {
            let pose = HeadPose::new(y, p, r).unwrap();
            let m = euler_to_rotmat(&pose);
            prop_assert!((m.matrix().determinant() - 1.0).abs() < 1e-9);
            let back = rotmat_to_euler(&m).unwrap();
            prop_assert!(max_pose_err(&pose, &back) < 1e-6);
            let m2 = euler_to_rotmat(&back);
            prop_assert!((m.matrix() - m2.matrix()).norm() < 1e-9);
        }
    }
}
