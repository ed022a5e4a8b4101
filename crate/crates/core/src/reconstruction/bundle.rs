//! Levenberg-Marquardt bundle adjustment with a robust loss and a Schur
//! complement on the point blocks.
//!
//! Each camera carries up to seven parameters: an axis-angle increment
//! `omega` left-multiplied onto its rotation, a translation increment, and an
//! optional multiplicative focal increment. Points carry three.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CameraError, CameraIntrinsics, MIN_DEPTH};

use super::{CloudPoint, ReconError, SparseCloud};

const CAM_PARAMS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RobustLoss {
    Squared,
    /// Quadratic below `delta` pixels, linear above.
    Huber {
        delta: f64,
    },
    Cauchy {
        scale: f64,
    },
}

impl Default for RobustLoss {
    fn default() -> Self {
        RobustLoss::Huber { delta: 2.0 }
    }
}

impl RobustLoss {
    /// `rho(s)` for a squared residual norm `s`.
    pub fn rho(&self, s: f64) -> f64 {
        match *self {
            RobustLoss::Squared => s,
            RobustLoss::Huber { delta } => {
                if s <= delta * delta {
                    s
                } else {
                    2.0 * delta * s.sqrt() - delta * delta
                }
            }
            RobustLoss::Cauchy { scale } => {
                let c2 = scale * scale;
                c2 * (s / c2).ln_1p()
            }
        }
    }

    /// `rho'(s)`, used as the reweighting factor of a residual.
    pub fn weight(&self, s: f64) -> f64 {
        match *self {
            RobustLoss::Squared => 1.0,
            RobustLoss::Huber { delta } => {
                if s <= delta * delta {
                    1.0
                } else {
                    delta / s.sqrt()
                }
            }
            RobustLoss::Cauchy { scale } => 1.0 / (1.0 + s / (scale * scale)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BundleOptions {
    pub loss: RobustLoss,
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub relative_tolerance: f64,
    /// Also refine one focal scale per camera.
    pub refine_focal: bool,
    /// Hold the first camera's pose fixed.
    pub fix_first_pose: bool,
    /// Hold the component of the second camera's translation that carries the
    /// first baseline's length fixed.
    pub fix_baseline_scale: bool,
}

impl Default for BundleOptions {
    fn default() -> Self {
        Self {
            loss: RobustLoss::default(),
            max_iterations: 100,
            initial_damping: 1e-3,
            relative_tolerance: 1e-10,
            refine_focal: false,
            fix_first_pose: true,
            fix_baseline_scale: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleReport {
    pub iterations: usize,
    pub converged: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Objective after each accepted step, starting with the initial value.
    pub cost_trace: Vec<f64>,
    pub initial_mean_reprojection: f64,
    pub initial_median_reprojection: f64,
    pub final_mean_reprojection: f64,
    pub final_median_reprojection: f64,
}

#[derive(Debug, Clone)]
pub struct BundleResult {
    pub cloud: SparseCloud,
    pub cameras: Vec<Camera>,
    pub report: BundleReport,
}

/// Projection and its Jacobian with respect to `[omega, dt]` of the pose.
pub fn pose_jacobian(camera: &Camera, x: &Vector3<f64>) -> Option<(Vector2<f64>, SMatrix<f64, 2, 6>)> {
    let j = reprojection_jacobian(camera, x).ok()?;
    Some((j.0, j.1.fixed_view::<2, 6>(0, 0).into()))
}

/// Projection of `x` and the 2x10 Jacobian of the pixel with respect to
/// `[omega (3), dt (3), focal scale (1), X (3)]`, all evaluated at zero
/// increment.
pub fn reprojection_jacobian(
    camera: &Camera,
    x: &Vector3<f64>,
) -> Result<(Vector2<f64>, SMatrix<f64, 2, 10>), CameraError> {
    let k = &camera.intrinsics;
    let r = camera.pose.rotation;
    let rx = r * x;
    let pc = rx + camera.pose.translation;
    if pc.z <= MIN_DEPTH {
        return Err(CameraError::BehindCamera { depth: pc.z });
    }
    let iz = 1.0 / pc.z;
    let (xn, yn) = (pc.x * iz, pc.y * iz);
    let pixel = Vector2::new(k.fx * xn + k.skew * yn + k.cx, k.fy * yn + k.cy);

    let d_pc = Matrix2x3::new(
        k.fx * iz,
        k.skew * iz,
        -(k.fx * xn + k.skew * yn) * iz,
        0.0,
        k.fy * iz,
        -k.fy * yn * iz,
    );
    let mut jac = SMatrix::<f64, 2, 10>::zeros();
    jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(d_pc * -rx.cross_matrix()));
    jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_pc);
    jac[(0, 6)] = k.fx * xn;
    jac[(1, 6)] = k.fy * yn;
    jac.fixed_view_mut::<2, 3>(0, 7).copy_from(&(d_pc * r));
    Ok((pixel, jac))
}

/// Applies a 7-vector increment to a camera.
pub fn apply_camera_increment(camera: &Camera, delta: &[f64; CAM_PARAMS]) -> Camera {
    let pose = camera.pose.perturbed(
        &Vector3::new(delta[0], delta[1], delta[2]),
        &Vector3::new(delta[3], delta[4], delta[5]),
    );
    let scale = 1.0 + delta[6];
    let intrinsics = CameraIntrinsics {
        fx: camera.intrinsics.fx * scale,
        fy: camera.intrinsics.fy * scale,
        ..camera.intrinsics
    };
    Camera::new(intrinsics, pose)
}

struct Obs {
    camera: usize,
    point: usize,
    pixel: Vector2<f64>,
}

fn residual_norms(cameras: &[Camera], points: &[Vector3<f64>], obs: &[Obs]) -> Vec<f64> {
    obs.iter()
        .map(|o| match cameras[o.camera].project(&points[o.point]) {
            Ok(p) => (p - o.pixel).norm(),
            Err(_) => f64::INFINITY,
        })
        .collect()
}

fn mean_and_median(errors: &[f64]) -> (f64, f64) {
    if errors.is_empty() {
        return (0.0, 0.0);
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    (mean, median)
}

fn total_cost(loss: &RobustLoss, cameras: &[Camera], points: &[Vector3<f64>], obs: &[Obs]) -> f64 {
    let mut cost = 0.0;
    for o in obs {
        match cameras[o.camera].project(&points[o.point]) {
            Ok(p) => cost += loss.rho((p - o.pixel).norm_squared()),
            Err(_) => return f64::INFINITY,
        }
    }
    cost
}

/// Which camera parameters are optimized, as a per-camera list of global
/// column indices (None for frozen entries).
fn camera_layout(cameras: &[Camera], options: &BundleOptions) -> (Vec<[Option<usize>; CAM_PARAMS]>, usize) {
    let mut layout = Vec::with_capacity(cameras.len());
    let mut next = 0;
    for (i, cam) in cameras.iter().enumerate() {
        let mut free = [true; CAM_PARAMS];
        free[6] = options.refine_focal;
        if i == 0 && options.fix_first_pose {
            free[..6].iter_mut().for_each(|f| *f = false);
        }
        if i == 1 && options.fix_baseline_scale {
            let c0 = cameras[0].pose.center();
            let baseline = cam.pose.rotation * c0 + cam.pose.translation;
            let j = baseline.iamax();
            free[3 + j] = false;
        }
        let mut cols = [None; CAM_PARAMS];
        for (k, f) in free.iter().enumerate() {
            if *f {
                cols[k] = Some(next);
                next += 1;
            }
        }
        layout.push(cols);
    }
    (layout, next)
}

/// Refines cameras and points by minimizing the summed robust reprojection
/// loss.
pub fn bundle_adjust(
    cloud: &SparseCloud,
    cameras: &[Camera],
    options: &BundleOptions,
) -> Result<BundleResult, ReconError> {
    if cameras.len() < 2 {
        return Err(ReconError::InsufficientCameras {
            found: cameras.len(),
            required: 2,
        });
    }
    cloud.validate(cameras.len())?;

    let obs: Vec<Obs> = cloud
        .points
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| {
            p.observations.iter().map(move |o| Obs {
                camera: o.view,
                point: pi,
                pixel: o.pixel,
            })
        })
        .collect();
    let mut by_point: Vec<Vec<usize>> = vec![Vec::new(); cloud.points.len()];
    for (i, o) in obs.iter().enumerate() {
        by_point[o.point].push(i);
    }

    let mut cams = cameras.to_vec();
    let mut points = cloud.positions();

    for o in &obs {
        cams[o.camera].project(&points[o.point])?;
    }
    let initial_errors = residual_norms(&cams, &points, &obs);
    if initial_errors.iter().any(|e| e.is_nan()) {
        return Err(ReconError::NumericalFailure("NaN residual in initial state".into()));
    }
    let (init_mean, init_median) = mean_and_median(&initial_errors);

    let (layout, nc) = camera_layout(&cams, options);
    let loss = options.loss;
    let mut cost = total_cost(&loss, &cams, &points, &obs);
    if !cost.is_finite() {
        return Err(ReconError::NumericalFailure("non-finite initial cost".into()));
    }
    let initial_cost = cost;
    let mut trace = vec![cost];
    let mut lambda = options.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        // Residuals at the level of rounding noise cannot be improved.
        if cost <= 1e-24 * obs.len() as f64 {
            converged = true;
            break;
        }
        iterations += 1;

        // Normal equations: U (cameras), V (points), W (coupling) and the
        // gradient halves gc, gp.
        let np = points.len();
        let mut u = DMatrix::<f64>::zeros(nc, nc);
        let mut gc = DVector::<f64>::zeros(nc);
        let mut v = vec![Matrix3::<f64>::zeros(); np];
        let mut gp = vec![Vector3::<f64>::zeros(); np];
        // Per observation: camera block of the Jacobian after weighting.
        let mut jc_blocks: Vec<SMatrix<f64, 2, CAM_PARAMS>> = Vec::with_capacity(obs.len());
        let mut jp_blocks: Vec<Matrix2x3<f64>> = Vec::with_capacity(obs.len());
        for o in &obs {
            let cam = &cams[o.camera];
            let (proj, jac) = reprojection_jacobian(cam, &points[o.point])?;
            let r = proj - o.pixel;
            if r.iter().any(|x| !x.is_finite()) {
                return Err(ReconError::NumericalFailure(format!(
                    "non-finite residual for point {} in view {}",
                    o.point, o.camera
                )));
            }
            let w = loss.weight(r.norm_squared());
            let sw = w.sqrt();
            let jc: SMatrix<f64, 2, CAM_PARAMS> = jac.fixed_view::<2, CAM_PARAMS>(0, 0) * sw;
            let jp: Matrix2x3<f64> = jac.fixed_view::<2, 3>(0, 7) * sw;
            let rw = r * sw;
            let cols = &layout[o.camera];
            for a in 0..CAM_PARAMS {
                let Some(ga) = cols[a] else { continue };
                gc[ga] += jc.column(a).dot(&rw);
                for b in 0..CAM_PARAMS {
                    if let Some(gb) = cols[b] {
                        u[(ga, gb)] += jc.column(a).dot(&jc.column(b));
                    }
                }
            }
            v[o.point] += jp.transpose() * jp;
            gp[o.point] += jp.transpose() * rw;
            jc_blocks.push(jc);
            jp_blocks.push(jp);
        }

        let grad_norm = gc.amax().max(gp.iter().map(|g| g.amax()).fold(0.0, f64::max));
        if grad_norm <= 1e-12 * cost.max(1e-300).sqrt() || grad_norm == 0.0 {
            converged = true;
            iterations -= 1;
            break;
        }

        let mut accepted = false;
        while !accepted {
            // Damped blocks.
            let mut ud = u.clone();
            for i in 0..nc {
                ud[(i, i)] += lambda * u[(i, i)].max(1e-12);
            }
            let mut v_inv = Vec::with_capacity(np);
            let mut singular = false;
            for vj in &v {
                let mut vd = *vj;
                for i in 0..3 {
                    vd[(i, i)] += lambda * vj[(i, i)].max(1e-12);
                }
                match vd.try_inverse() {
                    Some(inv) => v_inv.push(inv),
                    None => {
                        singular = true;
                        v_inv.push(Matrix3::zeros());
                    }
                }
            }
            if singular {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break;
                }
                continue;
            }

            // Schur complement: S = Ud - W V^-1 W^T, rhs = -gc + W V^-1 gp.
            let mut s = ud;
            let mut rhs = -gc.clone();
            for (pj, members) in by_point.iter().enumerate() {
                let vi = &v_inv[pj];
                let vg = vi * gp[pj];
                for &ia in members {
                    let oa = &obs[ia];
                    let wa = jc_blocks[ia].transpose() * jp_blocks[ia]; // 7x3
                    let cols_a = &layout[oa.camera];
                    let wavg = wa * vg;
                    for a in 0..CAM_PARAMS {
                        if let Some(ga) = cols_a[a] {
                            rhs[ga] += wavg[a];
                        }
                    }
                    let wav = wa * vi;
                    for &ib in members {
                        let ob = &obs[ib];
                        let wb = jc_blocks[ib].transpose() * jp_blocks[ib];
                        let blk = wav * wb.transpose();
                        let cols_b = &layout[ob.camera];
                        for a in 0..CAM_PARAMS {
                            let Some(ga) = cols_a[a] else { continue };
                            for b in 0..CAM_PARAMS {
                                if let Some(gb) = cols_b[b] {
                                    s[(ga, gb)] -= blk[(a, b)];
                                }
                            }
                        }
                    }
                }
            }

            let dc = if nc == 0 {
                Some(DVector::zeros(0))
            } else {
                s.cholesky().map(|c| c.solve(&rhs))
            };
            let Some(dc) = dc else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break;
                }
                continue;
            };

            // Back-substitute point steps: dp = V^-1 (-gp - W^T dc).
            let mut new_points = points.clone();
            for (pj, members) in by_point.iter().enumerate() {
                let mut acc = -gp[pj];
                for &ia in members {
                    let oa = &obs[ia];
                    let wa = jc_blocks[ia].transpose() * jp_blocks[ia];
                    let cols_a = &layout[oa.camera];
                    for a in 0..CAM_PARAMS {
                        if let Some(ga) = cols_a[a] {
                            acc -= wa.row(a).transpose() * dc[ga];
                        }
                    }
                }
                new_points[pj] += v_inv[pj] * acc;
            }
            let new_cams: Vec<Camera> = cams
                .iter()
                .zip(&layout)
                .map(|(c, cols)| {
                    let mut d = [0.0; CAM_PARAMS];
                    for k in 0..CAM_PARAMS {
                        if let Some(g) = cols[k] {
                            d[k] = dc[g];
                        }
                    }
                    if d.iter().all(|x| *x == 0.0) {
                        *c
                    } else {
                        apply_camera_increment(c, &d)
                    }
                })
                .collect();

            let new_cost = total_cost(&loss, &new_cams, &new_points, &obs);
            if new_cost.is_nan() {
                return Err(ReconError::NumericalFailure("NaN cost after step".into()));
            }
            if new_cost < cost {
                let rel = (cost - new_cost) / cost;
                cams = new_cams;
                points = new_points;
                cost = new_cost;
                trace.push(cost);
                lambda = (lambda * 0.1).max(1e-15);
                accepted = true;
                if rel < options.relative_tolerance {
                    converged = true;
                }
            } else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break;
                }
            }
        }
        if !accepted {
            // No descent direction left at any damping: a stationary point.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    let final_errors = residual_norms(&cams, &points, &obs);
    let (final_mean, final_median) = mean_and_median(&final_errors);
    let refined = SparseCloud {
        points: cloud
            .points
            .iter()
            .zip(&points)
            .map(|(p, x)| CloudPoint {
                position: *x,
                observations: p.observations.clone(),
            })
            .collect(),
        units: cloud.units,
    };
    Ok(BundleResult {
        cloud: refined,
        cameras: cams,
        report: BundleReport {
            iterations,
            converged,
            initial_cost,
            final_cost: cost,
            cost_trace: trace,
            initial_mean_reprojection: init_mean,
            initial_median_reprojection: init_median,
            final_mean_reprojection: final_mean,
            final_median_reprojection: final_median,
        },
    })
}

/// Per-observation reprojection errors of a cloud in pixels.
pub fn reprojection_errors(cloud: &SparseCloud, cameras: &[Camera]) -> Vec<f64> {
    cloud
        .points
        .iter()
        .flat_map(|p| {
            p.observations
                .iter()
                .map(move |o| match cameras[o.view].project(&p.position) {
                    Ok(px) => (px - o.pixel).norm(),
                    Err(_) => f64::INFINITY,
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, CameraPose};
    use crate::reconstruction::Observation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn ring_scene(n_cams: usize, n_pts: usize, seed: u64) -> (Vec<Camera>, Vec<Vector3<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = CameraIntrinsics::new(800.0, 800.0, 400.0, 300.0).unwrap();
        let cams = (0..n_cams)
            .map(|i| {
                let a = -0.6 + 1.2 * i as f64 / (n_cams - 1).max(1) as f64;
                let c = Vector3::new(5.0 * a.sin(), 0.3 * (i as f64).cos(), -5.0 * a.cos());
                Camera::new(k, CameraPose::look_at(c, Vector3::zeros(), -Vector3::y()))
            })
            .collect();
        let pts = (0..n_pts)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        (cams, pts)
    }

    fn cloud_from(cams: &[Camera], pts: &[Vector3<f64>]) -> SparseCloud {
        SparseCloud {
            points: pts
                .iter()
                .map(|x| CloudPoint {
                    position: *x,
                    observations: cams
                        .iter()
                        .enumerate()
                        .map(|(v, c)| Observation {
                            view: v,
                            pixel: c.project(x).unwrap(),
                        })
                        .collect(),
                })
                .collect(),
            units: Default::default(),
        }
    }

    #[test]
    fn huber_matches_squared_inside_threshold() {
        let h = RobustLoss::Huber { delta: 2.0 };
        assert_eq!(h.rho(3.0), 3.0);
        assert!((h.rho(16.0) - (2.0 * 2.0 * 4.0 - 4.0)).abs() < 1e-12);
        assert_eq!(h.weight(1.0), 1.0);
        assert!((h.weight(16.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn optimal_input_is_a_fixed_point() {
        let (cams, pts) = ring_scene(4, 30, 1);
        let cloud = cloud_from(&cams, &pts);
        let res = bundle_adjust(&cloud, &cams, &BundleOptions::default()).unwrap();
        assert!(res.report.iterations <= 2);
        assert!(res.report.initial_cost - res.report.final_cost < 1e-12);
        assert!(res.report.converged);
    }

    #[test]
    fn perturbed_scene_converges() {
        let (cams, pts) = ring_scene(5, 60, 2);
        let cloud = cloud_from(&cams, &pts);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut noisy_cloud = cloud.clone();
        for p in &mut noisy_cloud.points {
            p.position += Vector3::new(
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
            );
        }
        let noisy_cams: Vec<Camera> = cams
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    *c
                } else {
                    let d = [
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.05..0.05),
                        rng.random_range(-0.05..0.05),
                        rng.random_range(-0.05..0.05),
                        0.0,
                    ];
                    apply_camera_increment(c, &d)
                }
            })
            .collect();
        let res = bundle_adjust(&noisy_cloud, &noisy_cams, &BundleOptions::default()).unwrap();
        assert!(res.report.final_mean_reprojection < 1e-6, "{:?}", res.report);
        for w in res.report.cost_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for c in &res.cameras {
            assert!(c.pose.rotation_defect() < 1e-9);
        }
        assert_eq!(res.cameras[0], noisy_cams[0]);
    }

    #[test]
    fn single_camera_rejected() {
        let (cams, pts) = ring_scene(2, 5, 3);
        let cloud = cloud_from(&cams, &pts);
        assert!(matches!(
            bundle_adjust(&cloud, &cams[..1], &BundleOptions::default()),
            Err(ReconError::UnknownView(1)) | Err(ReconError::InsufficientCameras { .. })
        ));
    }
}
