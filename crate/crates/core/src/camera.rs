//! Pinhole camera model: intrinsics, world-to-camera poses and projection.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("point has depth {depth:.3e} in camera frame (behind or on the image plane)")]
    BehindCamera { depth: f64 },
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    InvalidIntrinsics { fx: f64, fy: f64 },
}

/// Points closer to the image plane than this are treated as behind it.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            skew: 0.0,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite() {
            Ok(())
        } else {
            Err(CameraError::InvalidIntrinsics {
                fx: self.fx,
                fy: self.fy,
            })
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn from_matrix(k: &Matrix3<f64>) -> Self {
        let k = k / k[(2, 2)];
        Self {
            fx: k[(0, 0)],
            fy: k[(1, 1)],
            cx: k[(0, 2)],
            cy: k[(1, 2)],
            skew: k[(0, 1)],
        }
    }

    /// Pixel to normalized image-plane coordinates (`K^-1 [u; 1]`).
    pub fn normalize(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        let y = (pixel.y - self.cy) / self.fy;
        let x = (pixel.x - self.cx - self.skew * y) / self.fx;
        Vector2::new(x, y)
    }

    /// Normalized image-plane coordinates to pixel.
    pub fn denormalize(&self, xy: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * xy.x + self.skew * xy.y + self.cx, self.fy * xy.y + self.cy)
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }
}

/// World-to-camera rigid transform: `X_cam = R X + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Row-major serialized form of a pose.
#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<PoseRepr> for CameraPose {
    fn from(r: PoseRepr) -> Self {
        Self {
            rotation: Matrix3::from_fn(|i, j| r.rotation[i][j]),
            translation: Vector3::from(r.translation),
        }
    }
}

impl From<CameraPose> for PoseRepr {
    fn from(p: CameraPose) -> Self {
        let m = p.rotation;
        Self {
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            translation: p.translation.into(),
        }
    }
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Pose of a camera at `center` looking at `target`, with image rows
    /// running along `-up`.
    pub fn look_at(center: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let z = (target - center).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self {
            rotation,
            translation: -rotation * center,
        }
    }

    /// Camera centre in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.transpose() * self.translation
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Left-multiplies an axis-angle increment onto the rotation and adds a
    /// translation increment.
    pub fn perturbed(&self, omega: &Vector3<f64>, dt: &Vector3<f64>) -> Self {
        let r = Rotation3::new(*omega).into_inner() * self.rotation;
        Self {
            rotation: orthonormalize(&r),
            translation: self.translation + dt,
        }
    }

    /// Deviation from an orthonormal, right-handed rotation:
    /// `max(|R^T R - I|_inf, |det R - 1|)`.
    pub fn rotation_defect(&self) -> f64 {
        let r = self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        ortho.max((r.determinant() - 1.0).abs())
    }

    /// `self` followed by `other` (world -> self frame -> other frame).
    pub fn then(&self, other: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: other.rotation * self.rotation,
            translation: other.rotation * self.translation + other.translation,
        }
    }

    pub fn inverse(&self) -> CameraPose {
        let rt = self.rotation.transpose();
        CameraPose {
            rotation: rt,
            translation: -rt * self.translation,
        }
    }
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}

/// Angle of the relative rotation between `a` and `b`, in radians.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Intrinsics plus pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, pose: CameraPose) -> Self {
        Self { intrinsics, pose }
    }

    pub fn project(&self, x: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
        project_point(&self.intrinsics, &self.pose, x)
    }

    /// Unit viewing direction in world coordinates through `pixel`.
    pub fn ray_direction(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let xy = self.intrinsics.normalize(pixel);
        (self.pose.rotation.transpose() * Vector3::new(xy.x, xy.y, 1.0)).normalize()
    }
}

/// A camera together with the pixel dimensions of its image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub width: u32,
    pub height: u32,
    pub camera: Camera,
}

/// `x = K [R | t] X`, dehomogenized.
pub fn project_point(k: &CameraIntrinsics, pose: &CameraPose, x: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
    let pc = pose.transform(x);
    if pc.z <= MIN_DEPTH {
        return Err(CameraError::BehindCamera { depth: pc.z });
    }
    Ok(k.denormalize(&Vector2::new(pc.x / pc.z, pc.y / pc.z)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let p = project_point(&k, &CameraPose::identity(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(p, Vector2::new(0.0, 0.0));
    }

    #[test]
    fn hand_computed_projection() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap();
        let p = project_point(&k, &CameraPose::identity(), &Vector3::new(0.1, -0.2, 1.0)).unwrap();
        assert!((p - Vector2::new(60.0, 30.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            project_point(&k, &CameraPose::identity(), &Vector3::new(0.0, 0.0, -1.0)),
            Err(CameraError::BehindCamera { .. })
        ));
    }

    #[test]
    fn invalid_focal_rejected() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn normalize_inverts_denormalize_with_skew() {
        let k = CameraIntrinsics {
            fx: 500.0,
            fy: 480.0,
            cx: 320.0,
            cy: 240.0,
            skew: 2.5,
        };
        let px = Vector2::new(17.0, 402.5);
        assert!((k.denormalize(&k.normalize(&px)) - px).norm() < 1e-10);
        let m = k.matrix();
        assert_eq!(CameraIntrinsics::from_matrix(&m), k);
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let pose = CameraPose::look_at(Vector3::new(3.0, -2.0, 5.0), Vector3::new(0.5, 0.5, 0.0), Vector3::z());
        assert!(pose.rotation_defect() < 1e-12);
        let pc = pose.transform(&Vector3::new(0.5, 0.5, 0.0));
        assert!(pc.x.abs() < 1e-12 && pc.y.abs() < 1e-12 && pc.z > 0.0);
        assert!((pose.center() - Vector3::new(3.0, -2.0, 5.0)).norm() < 1e-12);
    }

    #[test]
    fn pose_serializes_row_major() {
        let pose = CameraPose::new(
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let json = serde_json::to_string(&pose).unwrap();
        assert!(json.contains("[[0.0,-1.0,0.0],[1.0,0.0,0.0],[0.0,0.0,1.0]]"));
        let back: CameraPose = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pose);
    }
}
