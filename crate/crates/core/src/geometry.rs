//! Camera geometry: rotation parameterizations, the three world-to-camera
//! conventions found in the supported datasets, pinhole projection, and the
//! subject-relative viewpoint decomposition.
//!
//! All lengths are millimetres unless a name says otherwise; angles cross the
//! public API in degrees.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point {index} is behind the camera (z = {z} mm)")]
    BehindCamera { index: usize, z: f64 },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
}

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

/// Rodrigues rotation vector to rotation matrix. The zero vector maps to the
/// identity.
pub fn rodrigues(rvec: Vector3<f64>) -> Matrix3<f64> {
    let theta = rvec.norm();
    if theta == 0.0 {
        return Matrix3::identity();
    }
    let axis = rvec / theta;
    let k = cross_matrix(axis);
    Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos())
}

/// Inverse of [`rodrigues`]: recover the rotation vector from a rotation
/// matrix. The angle is in [0, pi]; at exactly pi the axis sign is chosen
/// deterministically.
pub fn rotation_to_rvec(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta < 1e-12 {
        return Vector3::zeros();
    }
    let antisym = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if cos_theta < 0.0 && theta.sin() < 1e-3 {
        // Near pi the antisymmetric part nearly vanishes and dividing by
        // sin(theta) amplifies matrix roundoff into the axis. The symmetric
        // part R + R^T = 2 cos I + 2 (1 - cos) aa^T is well conditioned
        // there; only the overall sign is left in the antisymmetric part.
        let one_minus_cos = 1.0 - cos_theta;
        let diag = Vector3::new(r[(0, 0)], r[(1, 1)], r[(2, 2)]);
        let i = diag.imax();
        let mut axis = Vector3::zeros();
        axis[i] = ((diag[i] - cos_theta) / one_minus_cos).max(0.0).sqrt();
        for j in 0..3 {
            if j != i {
                axis[j] = (r[(i, j)] + r[(j, i)]) / (2.0 * one_minus_cos * axis[i]);
            }
        }
        if antisym[i] < 0.0 {
            axis = -axis;
        }
        return axis.normalize() * theta;
    }
    antisym / (2.0 * theta.sin()) * theta
}

fn cross_matrix(v: Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// World-to-camera for rotation-plus-camera-center parameters:
/// `X_cam = R * (X - t)` where `t` is the camera centre in world mm.
pub fn world_to_cam_h36m(x_world: Vector3<f64>, r: &Matrix3<f64>, t: Vector3<f64>) -> Vector3<f64> {
    r * (x_world - t)
}

/// World-to-camera for Rodrigues-vector parameters with a centimetre
/// translation: `X_cam = R^T * X + 10 * t_cm`.
pub fn world_to_cam_gpa(
    x_world_mm: Vector3<f64>,
    rvec: Vector3<f64>,
    t_cm: Vector3<f64>,
) -> Vector3<f64> {
    rodrigues(rvec).transpose() * x_world_mm + t_cm * 10.0
}

/// World-to-camera for a 4x4 homogeneous extrinsic with bottom row
/// (0, 0, 0, 1): the product `E * [X; 1]` truncated to its first three rows.
pub fn world_to_cam_3dpw(x_world: Vector3<f64>, extrinsic: &Matrix4<f64>) -> Vector3<f64> {
    let h = extrinsic * x_world.push(1.0);
    Vector3::new(h.x, h.y, h.z)
}

/// Project camera-space points through pinhole intrinsics. Any point with
/// z <= 0 is behind the camera and rejected.
pub fn project(
    points_cam: &[Vector3<f64>],
    intr: &CameraIntrinsics,
) -> Result<Vec<Vector2<f64>>, GeometryError> {
    points_cam
        .iter()
        .enumerate()
        .map(|(index, p)| {
            if p.z <= 0.0 {
                return Err(GeometryError::BehindCamera { index, z: p.z });
            }
            Ok(Vector2::new(
                intr.fx * p.x / p.z + intr.cx,
                intr.fy * p.y / p.z + intr.cy,
            ))
        })
        .collect()
}

/// Camera direction expressed in the subject's body frame, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    /// Height angle of the camera above the subject's transverse plane,
    /// in [-90, 90].
    pub elevation_deg: f64,
    /// Horizontal angle of the camera around the subject, in (-180, 180];
    /// 0 is straight ahead, +90 is the subject's left.
    pub azimuth_deg: f64,
}

/// Canonical-16 joint indices used by [`subject_viewpoint`].
mod c16 {
    pub const HIP: usize = 0;
    pub const RIGHT_HIP: usize = 1;
    pub const LEFT_HIP: usize = 4;
    pub const NECK: usize = 8;
}

/// Decompose the camera position into elevation/azimuth relative to the
/// subject's body frame. Pose and camera centre must be expressed in the
/// same coordinate frame; the result is invariant to rigid motions applied
/// to both. For camera-space poses pass the origin as the camera centre.
pub fn subject_viewpoint(
    pose_c16: &[Vector3<f64>],
    camera_center: Vector3<f64>,
) -> Result<Viewpoint, GeometryError> {
    if pose_c16.len() < 16 {
        return Err(GeometryError::Degenerate(format!(
            "viewpoint needs a canonical-16 pose, got {} joints",
            pose_c16.len()
        )));
    }
    let hip = pose_c16[c16::HIP];
    let d = camera_center - hip;
    if d.norm() == 0.0 {
        return Err(GeometryError::Degenerate(
            "camera coincides with the subject's hip".into(),
        ));
    }
    let r = normalized(
        pose_c16[c16::LEFT_HIP] - pose_c16[c16::RIGHT_HIP],
        "hip axis",
    )?;
    let u0 = normalized(pose_c16[c16::NECK] - hip, "spine axis")?;
    let f = normalized(r.cross(&u0), "facing axis (hips collinear with spine)")?;
    let u = f.cross(&r);
    let elevation = (d.dot(&u) / d.norm()).clamp(-1.0, 1.0).asin();
    let azimuth = d.dot(&r).atan2(d.dot(&f));
    Ok(Viewpoint {
        elevation_deg: elevation.to_degrees(),
        azimuth_deg: azimuth.to_degrees(),
    })
}

fn normalized(v: Vector3<f64>, what: &str) -> Result<Vector3<f64>, GeometryError> {
    let n = v.norm();
    if n < 1e-9 {
        return Err(GeometryError::Degenerate(format!("{what} has zero length")));
    }
    Ok(v / n)
}

/// World-to-camera rotation for a camera at `center` looking at `target`.
/// Rows are the camera's x (right), y (down-ish along `up`'s negation... ) --
/// concretely: z looks at the target, x = normalize(z x up), y = z x x.
/// Falls back to `fallback_up` when the view direction is nearly parallel
/// to `up`.
pub fn look_at_rotation(
    center: Vector3<f64>,
    target: Vector3<f64>,
    up: Vector3<f64>,
    fallback_up: Vector3<f64>,
) -> Result<Matrix3<f64>, GeometryError> {
    let z = normalized(target - center, "view direction")?;
    let up = if z.dot(&normalized(up, "up")?).abs() > 0.999 {
        fallback_up
    } else {
        up
    };
    let x = normalized(z.cross(&up), "camera x axis")?;
    let y = z.cross(&x);
    Ok(Matrix3::from_rows(&[
        x.transpose(),
        y.transpose(),
        z.transpose(),
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn rodrigues_zero_vector_is_identity() {
        assert_eq!(rodrigues(Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let r = rodrigues(Vector3::new(0.0, 0.0, FRAC_PI_2));
        let got = r * Vector3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(got, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(r, expected, epsilon = 1e-12);
    }

    /// trace(R) = 1 + 2 cos(theta) for any rotation angle theta.
    #[test]
    fn rodrigues_trace_identity_oracle() {
        let axes = [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, -2.0, 0.5).normalize(),
            Vector3::new(-0.3, 0.9, 1.7).normalize(),
        ];
        for axis in axes {
            for k in 0..40 {
                let theta = -PI + (k as f64 + 0.5) * (2.0 * PI / 40.0);
                let r = rodrigues(axis * theta);
                assert!(
                    (r.trace() - (1.0 + 2.0 * theta.cos())).abs() < 1e-9,
                    "axis {axis:?} theta {theta}"
                );
                // orthonormality and orientation
                assert_relative_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-12);
                assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rvec_roundtrip() {
        let cases = [
            Vector3::new(0.1, -0.2, 0.3),
            Vector3::new(2.0, 1.0, -0.5),
            Vector3::new(0.0, 0.0, PI - 1e-4),
            Vector3::new(1e-7, 0.0, 0.0),
        ];
        for rvec in cases {
            let back = rotation_to_rvec(&rodrigues(rvec));
            assert_relative_eq!(back, rvec, epsilon = 1e-6, max_relative = 1e-6);
        }
        // angle pi: sign of the axis may flip, the rotation must not
        let rvec = Vector3::new(0.0, PI, 0.0);
        let back = rotation_to_rvec(&rodrigues(rvec));
        assert_relative_eq!(rodrigues(back), rodrigues(rvec), epsilon = 1e-6);
    }

    #[test]
    fn conventions_agree_on_the_same_physical_camera() {
        // physical camera: world->cam rotation R_wc, centre C (world mm)
        let r_wc = rodrigues(Vector3::new(0.3, -1.1, 0.7));
        let c = Vector3::new(1200.0, -450.0, 3300.0);
        let x = Vector3::new(230.0, 810.0, -190.0);
        let expected = r_wc * (x - c);

        let via_h36m = world_to_cam_h36m(x, &r_wc, c);
        assert_relative_eq!(via_h36m, expected, epsilon = 1e-9);

        // gpa stores the transpose as a Rodrigues vector and a cm offset
        let rvec = rotation_to_rvec(&r_wc.transpose());
        let t_cm = -(r_wc * c) / 10.0;
        let via_gpa = world_to_cam_gpa(x, rvec, t_cm);
        assert_relative_eq!(via_gpa, expected, epsilon = 1e-6);

        // 3dpw stores the full homogeneous extrinsic
        let mut e = Matrix4::identity();
        e.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_wc);
        e.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(r_wc * c)));
        let via_3dpw = world_to_cam_3dpw(x, &e);
        assert_relative_eq!(via_3dpw, expected, epsilon = 1e-9);
    }

    #[test]
    fn gpa_translation_is_centimetres() {
        // identity rotation, pure translation: 1 cm must become 10 mm
        let out = world_to_cam_gpa(
            Vector3::zeros(),
            Vector3::zeros(),
            Vector3::new(1.0, 0.0, 0.0),
        );
        assert_eq!(out, Vector3::new(10.0, 0.0, 0.0));
    }

    #[test]
    fn projection_examples() {
        let intr = CameraIntrinsics {
            fx: 1000.0,
            fy: 1000.0,
            cx: 500.0,
            cy: 500.0,
            width: 1000.0,
            height: 1000.0,
        };
        let out = project(
            &[
                Vector3::new(0.0, 0.0, 5000.0),
                Vector3::new(1000.0, -500.0, 2000.0),
            ],
            &intr,
        )
        .unwrap();
        assert_relative_eq!(out[0], Vector2::new(500.0, 500.0), epsilon = 1e-12);
        assert_relative_eq!(out[1], Vector2::new(1000.0, 250.0), epsilon = 1e-12);

        for z in [0.0, -1.0] {
            let err = project(&[Vector3::new(0.0, 0.0, z)], &intr).unwrap_err();
            assert!(matches!(err, GeometryError::BehindCamera { index: 0, .. }));
        }
    }

    /// Standing pose facing +z: left hip on +x, neck straight up (+y).
    fn standing_pose() -> Vec<Vector3<f64>> {
        let mut pose = vec![Vector3::zeros(); 16];
        pose[c16::HIP] = Vector3::zeros();
        pose[c16::RIGHT_HIP] = Vector3::new(-130.0, 0.0, 0.0);
        pose[c16::LEFT_HIP] = Vector3::new(130.0, 0.0, 0.0);
        pose[c16::NECK] = Vector3::new(0.0, 500.0, 0.0);
        // limbs are irrelevant to the viewpoint but keep them distinct
        for (i, p) in pose.iter_mut().enumerate() {
            if p.norm() == 0.0 && i != 0 {
                *p = Vector3::new(10.0 * i as f64, -300.0, 5.0 * i as f64);
            }
        }
        pose
    }

    #[test]
    fn viewpoint_cardinal_directions() {
        let pose = standing_pose();
        let d = 4000.0;

        let front = subject_viewpoint(&pose, Vector3::new(0.0, 0.0, d)).unwrap();
        assert_relative_eq!(front.elevation_deg, 0.0, epsilon = 1e-9);
        assert_relative_eq!(front.azimuth_deg, 0.0, epsilon = 1e-9);

        let overhead = subject_viewpoint(&pose, Vector3::new(0.0, d, 0.0)).unwrap();
        assert_relative_eq!(overhead.elevation_deg, 90.0, epsilon = 1e-9);

        let left = subject_viewpoint(&pose, Vector3::new(d, 0.0, 0.0)).unwrap();
        assert_relative_eq!(left.azimuth_deg, 90.0, epsilon = 1e-9);
        assert_relative_eq!(left.elevation_deg, 0.0, epsilon = 1e-9);

        let right = subject_viewpoint(&pose, Vector3::new(-d, 0.0, 0.0)).unwrap();
        assert_relative_eq!(right.azimuth_deg, -90.0, epsilon = 1e-9);

        let behind = subject_viewpoint(&pose, Vector3::new(0.0, 0.0, -d)).unwrap();
        assert_relative_eq!(behind.azimuth_deg.abs(), 180.0, epsilon = 1e-9);

        let below_front = subject_viewpoint(&pose, Vector3::new(0.0, -d, d)).unwrap();
        assert_relative_eq!(below_front.elevation_deg, -45.0, epsilon = 1e-9);
    }

    #[test]
    fn viewpoint_invariant_under_rigid_motion() {
        let pose = standing_pose();
        let camera = Vector3::new(1500.0, 2200.0, 3100.0);
        let base = subject_viewpoint(&pose, camera).unwrap();

        let rots = [
            Vector3::new(0.4, -0.9, 0.2),
            Vector3::new(-2.2, 0.1, 1.4),
            Vector3::new(0.0, 3.0, 0.0),
        ];
        for rvec in rots {
            let r = rodrigues(rvec);
            let t = Vector3::new(-800.0, 120.0, 4600.0);
            let moved: Vec<_> = pose.iter().map(|p| r * p + t).collect();
            let moved_cam = r * camera + t;
            let vp = subject_viewpoint(&moved, moved_cam).unwrap();
            assert_relative_eq!(vp.elevation_deg, base.elevation_deg, epsilon = 1e-9);
            assert_relative_eq!(vp.azimuth_deg, base.azimuth_deg, epsilon = 1e-9);
        }
    }

    #[test]
    fn viewpoint_degenerate_inputs_error() {
        let pose = standing_pose();
        assert!(subject_viewpoint(&pose, pose[0]).is_err());

        let mut collinear = pose.clone();
        // spine along the hip axis makes the facing direction undefined
        collinear[c16::NECK] = Vector3::new(260.0, 0.0, 0.0);
        assert!(subject_viewpoint(&collinear, Vector3::new(0.0, 0.0, 4000.0)).is_err());
    }

    #[test]
    fn look_at_points_z_axis_at_target() {
        let center = Vector3::new(0.0, 1000.0, -4000.0);
        let target = Vector3::new(0.0, 800.0, 0.0);
        let r = look_at_rotation(center, target, Vector3::y(), Vector3::x()).unwrap();
        // the target must land on the +z axis in camera coordinates
        let cam = r * (target - center);
        assert_relative_eq!(cam.x, 0.0, epsilon = 1e-9);
        assert_relative_eq!(cam.y, 0.0, epsilon = 1e-9);
        assert!(cam.z > 0.0);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(r * r.transpose(), Matrix3::identity(), epsilon = 1e-12);

        // looking straight down triggers the fallback up instead of failing
        let top = Vector3::new(0.0, 5000.0, 0.0);
        let down = look_at_rotation(top, Vector3::zeros(), Vector3::y(), Vector3::x()).unwrap();
        let cam = down * (Vector3::zeros() - top);
        assert!(cam.z > 0.0);
    }
}
