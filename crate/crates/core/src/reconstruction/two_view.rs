//! Essential-matrix estimation (normalized 8-point inside RANSAC) and
//! cheirality-based pose recovery.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraPose};

use super::{null_vector, ReconError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
}

impl Correspondence {
    pub fn new(a: Vector2<f64>, b: Vector2<f64>) -> Self {
        Self { a, b }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub max_iterations: usize,
    /// Inlier threshold on the Sampson / reprojection distance, in pixels.
    pub threshold_px: f64,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            threshold_px: 1.5,
            confidence: 0.9999,
            seed: 0,
        }
    }
}

/// Iterations needed to draw an all-inlier sample with probability
/// `confidence` at the given inlier ratio.
pub(crate) fn adaptive_iterations(confidence: f64, inlier_ratio: f64, sample_size: usize, cap: usize) -> usize {
    let w = inlier_ratio.powi(sample_size as i32);
    if w <= f64::EPSILON {
        return cap;
    }
    if w >= 1.0 - f64::EPSILON {
        return 1;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

#[derive(Debug, Clone)]
pub struct TwoViewEstimate {
    /// Pose of camera b with camera a at the origin; `|t| = 1`.
    pub pose: CameraPose,
    pub essential: Matrix3<f64>,
    pub inliers: Vec<usize>,
    pub inlier_ratio: f64,
    /// Median triangulation angle over cheirality-consistent inliers, radians.
    pub median_triangulation_angle: f64,
}

/// Hartley similarity normalization: centroid to origin, mean distance sqrt(2).
fn normalization(points: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

fn apply(t: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let h = t * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(h.x / h.z, h.y / h.z)
}

/// Linear essential matrix from >= 8 normalized-coordinate pairs, with the
/// singular values projected onto `(s, s, 0)`.
pub fn eight_point(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> Result<Matrix3<f64>, ReconError> {
    if a.len() < 8 {
        return Err(ReconError::InsufficientMatches {
            found: a.len(),
            required: 8,
        });
    }
    let (ta, tb) = match (normalization(a), normalization(b)) {
        (Some(ta), Some(tb)) => (ta, tb),
        _ => return Err(ReconError::DegenerateGeometry("coincident image points".into())),
    };
    let rows = a.len().max(9);
    let mut m = DMatrix::<f64>::zeros(rows, 9);
    for (i, (pa, pb)) in a.iter().zip(b).enumerate() {
        let (pa, pb) = (apply(&ta, pa), apply(&tb, pb));
        let row = [
            pb.x * pa.x,
            pb.x * pa.y,
            pb.x,
            pb.y * pa.x,
            pb.y * pa.y,
            pb.y,
            pa.x,
            pa.y,
            1.0,
        ];
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    let (e, singular) = null_vector(&m);
    // rank must be 8 for a unique solution
    if singular[7] <= 1e-10 * singular[0] {
        return Err(ReconError::DegenerateGeometry(
            "correspondence system is rank deficient".into(),
        ));
    }
    let e_norm = Matrix3::from_row_slice(e.as_slice());
    let e = tb.transpose() * e_norm * ta;
    Ok(project_essential(&e))
}

fn project_essential(e: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = e.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let s = 0.5 * (svd.singular_values[0] + svd.singular_values[1]);
    let e = u * Matrix3::from_diagonal(&Vector3::new(s, s, 0.0)) * vt;
    e / e.norm()
}

/// Squared Sampson distance of a normalized-coordinate pair.
fn sampson(e: &Matrix3<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let xa = Vector3::new(a.x, a.y, 1.0);
    let xb = Vector3::new(b.x, b.y, 1.0);
    let ea = e * xa;
    let etb = e.transpose() * xb;
    let num = xb.dot(&ea);
    let den = ea.x * ea.x + ea.y * ea.y + etb.x * etb.x + etb.y * etb.y;
    if den <= 0.0 {
        f64::INFINITY
    } else {
        num * num / den
    }
}

/// Two-view midpoint-free linear triangulation in normalized coordinates;
/// returns the point in camera-a coordinates.
pub(crate) fn triangulate_normalized(pose_b: &CameraPose, a: &Vector2<f64>, b: &Vector2<f64>) -> Option<Vector3<f64>> {
    let r = pose_b.rotation;
    let t = pose_b.translation;
    let mut m = DMatrix::<f64>::zeros(4, 4);
    let pa = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
    let pb = [
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
    ];
    for j in 0..4 {
        m[(0, j)] = a.x * pa[2][j] - pa[0][j];
        m[(1, j)] = a.y * pa[2][j] - pa[1][j];
        m[(2, j)] = b.x * pb[2][j] - pb[0][j];
        m[(3, j)] = b.y * pb[2][j] - pb[1][j];
    }
    let (x, _) = null_vector(&m);
    if x[3].abs() < 1e-14 {
        return None;
    }
    Some(Vector3::new(x[0] / x[3], x[1] / x[3], x[2] / x[3]))
}

/// The four `(R, t)` factorizations of an essential matrix.
pub fn decompose_essential(e: &Matrix3<f64>) -> [CameraPose; 4] {
    let svd = e.svd(true, true);
    let mut u = svd.u.expect("u");
    let mut vt = svd.v_t.expect("v_t");
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if vt.determinant() < 0.0 {
        vt.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * vt;
    let r2 = u * w.transpose() * vt;
    let t: Vector3<f64> = u.column(2).into();
    [
        CameraPose::new(r1, t),
        CameraPose::new(r1, -t),
        CameraPose::new(r2, t),
        CameraPose::new(r2, -t),
    ]
}

/// Picks the decomposition placing most points in front of both cameras.
fn recover_pose(
    e: &Matrix3<f64>,
    a: &[Vector2<f64>],
    b: &[Vector2<f64>],
) -> Result<(CameraPose, Vec<bool>, f64), ReconError> {
    let mut best: Option<(CameraPose, Vec<bool>, usize)> = None;
    for pose in decompose_essential(e) {
        let front: Vec<bool> = a
            .iter()
            .zip(b)
            .map(|(pa, pb)| match triangulate_normalized(&pose, pa, pb) {
                Some(x) => x.z > 0.0 && pose.transform(&x).z > 0.0,
                None => false,
            })
            .collect();
        let count = front.iter().filter(|&&f| f).count();
        if best.as_ref().is_none_or(|b| count > b.2) {
            best = Some((pose, front, count));
        }
    }
    let (pose, front, count) = best.expect("four candidates");
    if count * 2 <= a.len() {
        return Err(ReconError::DegenerateGeometry(format!(
            "no cheirality-consistent decomposition ({count} of {} points in front)",
            a.len()
        )));
    }
    let center_b = pose.center();
    let mut angles: Vec<f64> = a
        .iter()
        .zip(b)
        .zip(&front)
        .filter(|(_, &f)| f)
        .filter_map(|((pa, pb), _)| triangulate_normalized(&pose, pa, pb))
        .map(|x| {
            let ra = x.normalize();
            let rb = (x - center_b).normalize();
            ra.dot(&rb).clamp(-1.0, 1.0).acos()
        })
        .collect();
    angles.sort_by(f64::total_cmp);
    let median = angles.get(angles.len() / 2).copied().unwrap_or(0.0);
    Ok((pose, front, median))
}

/// Relative pose of view b with respect to view a from pixel
/// correspondences.
pub fn estimate_two_view_pose(
    matches: &[Correspondence],
    k_a: &CameraIntrinsics,
    k_b: &CameraIntrinsics,
    params: &RansacParams,
) -> Result<TwoViewEstimate, ReconError> {
    if matches.len() < 8 {
        return Err(ReconError::InsufficientMatches {
            found: matches.len(),
            required: 8,
        });
    }
    let a: Vec<Vector2<f64>> = matches.iter().map(|m| k_a.normalize(&m.a)).collect();
    let b: Vec<Vector2<f64>> = matches.iter().map(|m| k_b.normalize(&m.b)).collect();
    if normalization(&a).is_none() || normalization(&b).is_none() {
        return Err(ReconError::DegenerateGeometry("coincident image points".into()));
    }
    let focal = 0.5 * (k_a.mean_focal() + k_b.mean_focal());
    let thresh2 = (params.threshold_px / focal).powi(2);
    let n = matches.len();

    let score = |e: &Matrix3<f64>| -> Vec<usize> { (0..n).filter(|&i| sampson(e, &a[i], &b[i]) < thresh2).collect() };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Vec<usize> = Vec::new();
    let mut best_e = Matrix3::zeros();
    let mut iterations = params.max_iterations;
    let mut it = 0;
    let mut sa = Vec::with_capacity(8);
    let mut sb = Vec::with_capacity(8);
    while it < iterations {
        it += 1;
        sa.clear();
        sb.clear();
        for i in sample(&mut rng, n, 8) {
            sa.push(a[i]);
            sb.push(b[i]);
        }
        let Ok(e) = eight_point(&sa, &sb) else {
            continue;
        };
        let inliers = score(&e);
        if inliers.len() > best.len() {
            best = inliers;
            best_e = e;
            iterations = adaptive_iterations(
                params.confidence,
                best.len() as f64 / n as f64,
                8,
                params.max_iterations,
            );
        }
    }
    if best.len() < 8 {
        return Err(ReconError::DegenerateGeometry(
            "no essential matrix supported by 8 or more correspondences".into(),
        ));
    }

    // Least-squares refits on the consensus set, kept only while they do
    // not lose support.
    let mut e = best_e;
    for _ in 0..2 {
        let ia: Vec<_> = best.iter().map(|&i| a[i]).collect();
        let ib: Vec<_> = best.iter().map(|&i| b[i]).collect();
        let Ok(refit_e) = eight_point(&ia, &ib) else { break };
        let refit = score(&refit_e);
        if refit.len() < best.len() {
            break;
        }
        e = refit_e;
        best = refit;
    }

    let ia: Vec<_> = best.iter().map(|&i| a[i]).collect();
    let ib: Vec<_> = best.iter().map(|&i| b[i]).collect();
    let (pose, front, median_angle) = recover_pose(&e, &ia, &ib)?;
    let inliers: Vec<usize> = best.iter().zip(&front).filter(|(_, &f)| f).map(|(&i, _)| i).collect();

    Ok(TwoViewEstimate {
        pose,
        essential: e,
        inlier_ratio: inliers.len() as f64 / n as f64,
        inliers,
        median_triangulation_angle: median_angle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{project_point, rotation_angle_between};
    use nalgebra::Rotation3;
    use rand::Rng;

    fn scene(n: usize, seed: u64) -> (CameraIntrinsics, CameraPose, Vec<Vector3<f64>>) {
        let k = CameraIntrinsics::new(800.0, 800.0, 400.0, 300.0).unwrap();
        let rot = Rotation3::from_euler_angles(0.05, -0.2, 0.03).into_inner();
        let center = Vector3::new(1.0, 0.1, 0.2);
        let pose = CameraPose::new(rot, -rot * center);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.5),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(4.0..7.0),
                )
            })
            .collect();
        (k, pose, pts)
    }

    fn correspondences(k: &CameraIntrinsics, pose: &CameraPose, pts: &[Vector3<f64>]) -> Vec<Correspondence> {
        pts.iter()
            .map(|x| {
                Correspondence::new(
                    project_point(k, &CameraPose::identity(), x).unwrap(),
                    project_point(k, pose, x).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn exact_correspondences_recover_pose() {
        let (k, truth, pts) = scene(50, 1);
        let m = correspondences(&k, &truth, &pts);
        let est = estimate_two_view_pose(&m, &k, &k, &RansacParams::default()).unwrap();
        assert!(rotation_angle_between(&est.pose.rotation, &truth.rotation) < 1e-3);
        let dir_err = est
            .pose
            .translation
            .normalize()
            .dot(&truth.translation.normalize())
            .clamp(-1.0, 1.0)
            .acos();
        assert!(dir_err < 1e-3, "translation direction error {dir_err}");
        assert_eq!(est.inliers.len(), 50);
        assert_eq!(est.inlier_ratio, 1.0);
    }

    #[test]
    fn planted_outliers_are_rejected() {
        let (k, truth, pts) = scene(80, 2);
        let mut m = correspondences(&k, &truth, &pts);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let outliers: Vec<usize> = (0..80).filter(|i| i % 5 == 0).collect();
        for &i in &outliers {
            m[i].b = Vector2::new(rng.random_range(0.0..800.0), rng.random_range(0.0..600.0));
        }
        let est = estimate_two_view_pose(&m, &k, &k, &RansacParams::default()).unwrap();
        let kept = outliers.iter().filter(|i| est.inliers.contains(i)).count();
        assert!(kept as f64 <= 0.1 * outliers.len() as f64, "{kept} outliers kept");
        let rerr = rotation_angle_between(&est.pose.rotation, &truth.rotation);
        assert!(rerr < 1e-3, "rotation error {rerr}");
    }

    #[test]
    fn identical_points_are_degenerate() {
        let k = CameraIntrinsics::new(800.0, 800.0, 400.0, 300.0).unwrap();
        let m = vec![Correspondence::new(Vector2::new(10.0, 20.0), Vector2::new(30.0, 40.0)); 20];
        assert!(matches!(
            estimate_two_view_pose(&m, &k, &k, &RansacParams::default()),
            Err(ReconError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn too_few_matches() {
        let (k, truth, pts) = scene(7, 3);
        let m = correspondences(&k, &truth, &pts);
        assert!(matches!(
            estimate_two_view_pose(&m, &k, &k, &RansacParams::default()),
            Err(ReconError::InsufficientMatches { found: 7, .. })
        ));
    }

    #[test]
    fn iteration_count_formula() {
        assert_eq!(adaptive_iterations(0.99, 1.0, 8, 1000), 1);
        assert_eq!(adaptive_iterations(0.99, 0.0, 8, 1000), 1000);
        // 0.5^8 = 1/256: ln(0.01)/ln(255/256) = 1176.6
        assert_eq!(adaptive_iterations(0.99, 0.5, 8, 5000), 1177);
    }
}
