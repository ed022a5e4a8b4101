//! Multi-view linear (DLT) triangulation.

use nalgebra::{DMatrix, Vector2, Vector3};

use crate::camera::Camera;

use super::{null_vector, ReconError};

/// Rays closer to parallel than this are rejected.
pub const MIN_PARALLAX_RAD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Triangulated {
    pub position: Vector3<f64>,
    /// Per-observation reprojection error in pixels (infinite when the
    /// point lands behind that camera).
    pub reprojection_errors: Vec<f64>,
    /// Largest angle between any two viewing rays, radians.
    pub parallax: f64,
}

impl Triangulated {
    pub fn mean_reprojection_error(&self) -> f64 {
        self.reprojection_errors.iter().sum::<f64>() / self.reprojection_errors.len() as f64
    }

    pub fn max_reprojection_error(&self) -> f64 {
        self.reprojection_errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Largest pairwise angle between the viewing rays of the observations.
pub fn max_parallax(observations: &[(usize, Vector2<f64>)], cameras: &[Camera]) -> f64 {
    let rays: Vec<Vector3<f64>> = observations
        .iter()
        .map(|(v, px)| cameras[*v].ray_direction(px))
        .collect();
    let mut best = 0.0f64;
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            best = best.max(rays[i].dot(&rays[j]).clamp(-1.0, 1.0).acos());
        }
    }
    best
}

/// Linear least-squares point from `(view index, pixel)` observations.
pub fn triangulate_point(
    observations: &[(usize, Vector2<f64>)],
    cameras: &[Camera],
) -> Result<Triangulated, ReconError> {
    if observations.len() < 2 {
        return Err(ReconError::TooFewObservations(observations.len()));
    }
    if let Some((v, _)) = observations.iter().find(|(v, _)| *v >= cameras.len()) {
        return Err(ReconError::UnknownView(*v));
    }
    let parallax = max_parallax(observations, cameras);
    if parallax < MIN_PARALLAX_RAD {
        return Err(ReconError::LowParallax { angle: parallax });
    }

    let rows = (2 * observations.len()).max(4);
    let mut m = DMatrix::<f64>::zeros(rows, 4);
    for (i, (v, px)) in observations.iter().enumerate() {
        let cam = &cameras[*v];
        let xy = cam.intrinsics.normalize(px);
        let r = cam.pose.rotation;
        let t = cam.pose.translation;
        for j in 0..4 {
            let p = |row: usize| if j < 3 { r[(row, j)] } else { t[row] };
            m[(2 * i, j)] = xy.x * p(2) - p(0);
            m[(2 * i + 1, j)] = xy.y * p(2) - p(1);
        }
    }
    let (x, _) = null_vector(&m);
    if x[3].abs() < 1e-14 {
        return Err(ReconError::LowParallax { angle: parallax });
    }
    let position = Vector3::new(x[0] / x[3], x[1] / x[3], x[2] / x[3]);
    let reprojection_errors = observations
        .iter()
        .map(|(v, px)| match cameras[*v].project(&position) {
            Ok(p) => (p - px).norm(),
            Err(_) => f64::INFINITY,
        })
        .collect();
    Ok(Triangulated {
        position,
        reprojection_errors,
        parallax,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, CameraPose};
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn stereo() -> Vec<Camera> {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
        vec![
            Camera::new(k, CameraPose::new(Matrix3::identity(), Vector3::new(0.5, 0.0, 0.0))),
            Camera::new(k, CameraPose::new(Matrix3::identity(), Vector3::new(-0.5, 0.0, 0.0))),
        ]
    }

    #[test]
    fn exact_projections_recover_point() {
        let cams = stereo();
        let x = Vector3::new(0.0, 0.0, 2.0);
        let obs: Vec<_> = cams
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.project(&x).unwrap()))
            .collect();
        let t = triangulate_point(&obs, &cams).unwrap();
        assert!((t.position - x).norm() < 1e-9);
        assert!(t.max_reprojection_error() < 1e-9);
    }

    #[test]
    fn noisy_projections_stay_within_one_percent_of_baseline() {
        let cams = stereo();
        let baseline = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut total = 0.0f64;
        let trials = 200;
        for _ in 0..trials {
            let x = Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(1.5..2.5),
            );
            let obs: Vec<_> = cams
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let p = c.project(&x).unwrap();
                    (i, p + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
                })
                .collect();
            let t = triangulate_point(&obs, &cams).unwrap();
            total += (t.position - x).norm();
        }
        let mean = total / trials as f64;
        assert!(mean < 0.01 * baseline, "mean error {mean}");
    }

    #[test]
    fn same_pose_is_low_parallax() {
        let cams = stereo();
        let px = Vector2::new(300.0, 200.0);
        assert!(matches!(
            triangulate_point(&[(0, px), (0, px)], &cams),
            Err(ReconError::LowParallax { .. })
        ));
    }

    #[test]
    fn single_observation_rejected() {
        let cams = stereo();
        assert!(matches!(
            triangulate_point(&[(0, Vector2::new(1.0, 1.0))], &cams),
            Err(ReconError::TooFewObservations(1))
        ));
    }
}
