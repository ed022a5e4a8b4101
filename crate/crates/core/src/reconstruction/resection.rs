//! Calibrated camera resection from 2D-3D correspondences: linear DLT in a
//! RANSAC loop followed by Gauss-Newton refinement of the pose.

use nalgebra::{DMatrix, Matrix3, Matrix6, SMatrix, Vector2, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::{orthonormalize, Camera, CameraIntrinsics, CameraPose};

use super::bundle::pose_jacobian;
use super::two_view::{adaptive_iterations, RansacParams};
use super::{null_vector, ReconError};

const SAMPLE: usize = 6;

#[derive(Debug, Clone)]
pub struct Resection {
    pub pose: CameraPose,
    pub inliers: Vec<usize>,
}

/// Pose from >= 6 points by the direct linear transform on normalized image
/// coordinates.
pub fn dlt_pose(points: &[Vector3<f64>], normalized: &[Vector2<f64>]) -> Result<CameraPose, ReconError> {
    let n = points.len();
    if n < SAMPLE {
        return Err(ReconError::InsufficientMatches {
            found: n,
            required: SAMPLE,
        });
    }
    // condition the 3D points
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n as f64;
    let spread = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n as f64;
    if !(spread > 1e-12) {
        return Err(ReconError::DegenerateGeometry("coincident 3D points".into()));
    }
    let s = 3f64.sqrt() / spread;

    let mut m = DMatrix::<f64>::zeros((2 * n).max(12), 12);
    for (i, (p, x)) in points.iter().zip(normalized).enumerate() {
        let q = (p - c) * s;
        let h = [q.x, q.y, q.z, 1.0];
        for j in 0..4 {
            m[(2 * i, j)] = h[j];
            m[(2 * i, 8 + j)] = -x.x * h[j];
            m[(2 * i + 1, 4 + j)] = h[j];
            m[(2 * i + 1, 8 + j)] = -x.y * h[j];
        }
    }
    let (v, singular) = null_vector(&m);
    if singular[10] <= 1e-12 * singular[0] {
        return Err(ReconError::DegenerateGeometry(
            "resection system is rank deficient".into(),
        ));
    }
    let p = SMatrix::<f64, 3, 4>::from_row_slice(v.as_slice());
    let mut a: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into();
    let mut b: Vector3<f64> = p.column(3).into();
    if a.determinant() < 0.0 {
        a = -a;
        b = -b;
    }
    let scale = a.svd(false, false).singular_values.mean();
    if !(scale > 0.0) {
        return Err(ReconError::DegenerateGeometry("singular projection".into()));
    }
    let r = orthonormalize(&a);
    // undo the conditioning: x ~ R s (X - c) + b / scale
    let t_cond = b / scale;
    Ok(CameraPose::new(r, (t_cond - s * r * c) / s))
}

/// Gauss-Newton on the pixel reprojection error with fixed points.
pub fn refine_pose(
    k: &CameraIntrinsics,
    pose: &CameraPose,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    iterations: usize,
) -> CameraPose {
    let cost = |pose: &CameraPose| -> f64 {
        points
            .iter()
            .zip(pixels)
            .map(|(x, u)| match Camera::new(*k, *pose).project(x) {
                Ok(p) => (p - u).norm_squared(),
                Err(_) => 1e12,
            })
            .sum()
    };
    let mut pose = *pose;
    let mut current = cost(&pose);
    let mut lambda = 1e-3;
    for _ in 0..iterations {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (x, u) in points.iter().zip(pixels) {
            let cam = Camera::new(*k, pose);
            let Some((proj, j)) = pose_jacobian(&cam, x) else {
                continue;
            };
            let r = proj - u;
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let mut accepted = false;
        for _ in 0..8 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-9);
            }
            let Some(delta) = damped.cholesky().map(|c| -c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = pose.perturbed(
                &Vector3::new(delta[0], delta[1], delta[2]),
                &Vector3::new(delta[3], delta[4], delta[5]),
            );
            let c = cost(&candidate);
            if c < current {
                pose = candidate;
                let rel = (current - c) / current.max(1e-300);
                current = c;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    pose
}

/// Robust resection of a calibrated camera.
pub fn resect_camera(
    k: &CameraIntrinsics,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    params: &RansacParams,
) -> Result<Resection, ReconError> {
    let n = points.len();
    if n < SAMPLE {
        return Err(ReconError::InsufficientMatches {
            found: n,
            required: SAMPLE,
        });
    }
    let normalized: Vec<Vector2<f64>> = pixels.iter().map(|p| k.normalize(p)).collect();
    let thresh2 = params.threshold_px.powi(2);
    let inliers_of = |pose: &CameraPose| -> Vec<usize> {
        let cam = Camera::new(*k, *pose);
        (0..n)
            .filter(|&i| match cam.project(&points[i]) {
                Ok(p) => (p - pixels[i]).norm_squared() < thresh2,
                Err(_) => false,
            })
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Vec<usize> = Vec::new();
    let mut iterations = params.max_iterations;
    let mut it = 0;
    while it < iterations {
        it += 1;
        let idx = sample(&mut rng, n, SAMPLE).into_vec();
        let sp: Vec<_> = idx.iter().map(|&i| points[i]).collect();
        let sx: Vec<_> = idx.iter().map(|&i| normalized[i]).collect();
        let Ok(pose) = dlt_pose(&sp, &sx) else {
            continue;
        };
        let inl = inliers_of(&pose);
        if inl.len() > best.len() {
            best = inl;
            iterations = adaptive_iterations(
                params.confidence,
                best.len() as f64 / n as f64,
                SAMPLE,
                params.max_iterations,
            );
        }
    }
    if best.len() < SAMPLE {
        return Err(ReconError::DegenerateGeometry(
            "no pose supported by 6 or more 2D-3D correspondences".into(),
        ));
    }

    let mut pose = {
        let sp: Vec<_> = best.iter().map(|&i| points[i]).collect();
        let sx: Vec<_> = best.iter().map(|&i| normalized[i]).collect();
        dlt_pose(&sp, &sx)?
    };
    for _ in 0..3 {
        let sp: Vec<_> = best.iter().map(|&i| points[i]).collect();
        let su: Vec<_> = best.iter().map(|&i| pixels[i]).collect();
        pose = refine_pose(k, &pose, &sp, &su, 20);
        let inl = inliers_of(&pose);
        if inl.len() < SAMPLE || inl == best {
            break;
        }
        best = inl;
    }
    Ok(Resection { pose, inliers: best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::rotation_angle_between;
    use nalgebra::Rotation3;
    use rand::Rng;

    #[test]
    fn recovers_pose_with_outliers() {
        let k = CameraIntrinsics::new(700.0, 700.0, 400.0, 300.0).unwrap();
        let rot = Rotation3::from_euler_angles(0.1, 0.3, -0.2).into_inner();
        let truth = CameraPose::new(rot, Vector3::new(0.2, -0.1, 4.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vector3<f64>> = (0..60)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let mut px: Vec<Vector2<f64>> = pts.iter().map(|x| Camera::new(k, truth).project(x).unwrap()).collect();
        for p in px.iter_mut().step_by(6) {
            *p += Vector2::new(rng.random_range(30.0..90.0), rng.random_range(-90.0..-30.0));
        }
        let res = resect_camera(&k, &pts, &px, &RansacParams::default()).unwrap();
        assert!(rotation_angle_between(&res.pose.rotation, &truth.rotation) < 1e-8);
        assert!((res.pose.translation - truth.translation).norm() < 1e-8);
        assert_eq!(res.inliers.len(), 50);
    }

    #[test]
    fn too_few_points() {
        let k = CameraIntrinsics::new(700.0, 700.0, 400.0, 300.0).unwrap();
        let pts = vec![Vector3::new(0.0, 0.0, 1.0); 5];
        let px = vec![Vector2::new(0.0, 0.0); 5];
        assert!(resect_camera(&k, &pts, &px, &RansacParams::default()).is_err());
    }
}
