//! Wound geometry on a labeled mesh: surface area, boundary length, a
//! reference surface fitted to the surrounding healthy skin, signed depth and
//! a cavity volume proxy.

use std::collections::{BTreeSet, VecDeque};

use chrono::{DateTime, Utc};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapping::LabeledMesh;
use crate::mesh::MeshError;
use crate::units::Units;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Topology(#[from] MeshError),
    #[error("reference fit is degenerate: {0}")]
    DegenerateFit(String),
    #[error("burn region is empty")]
    EmptyRegion,
    #[error("geometry is in {0} units; metric scaling to cm is required")]
    Unscaled(&'static str),
    #[error("body surface area must be positive, got {0}")]
    InvalidBsa(f64),
}

pub fn triangle_area(v1: &Vector3<f64>, v2: &Vector3<f64>, v3: &Vector3<f64>) -> f64 {
    0.5 * (v2 - v1).cross(&(v3 - v1)).norm()
}

/// Summed area of burned faces, in face order.
pub fn burn_surface_area(mesh: &LabeledMesh) -> f64 {
    mesh.burned_faces().map(|f| mesh.mesh.face_area(f)).sum()
}

/// Total length of edges with exactly one burned incident face. Open-mesh
/// rim edges of burned faces are included.
pub fn burn_perimeter(mesh: &LabeledMesh) -> Result<f64, MetricsError> {
    let edges = mesh.mesh.manifold_edge_faces()?;
    Ok(edges
        .iter()
        .filter(|(_, faces)| faces.iter().filter(|&&f| mesh.burned[f]).count() == 1)
        .map(|(&(a, b), _)| (mesh.mesh.vertices[a] - mesh.mesh.vertices[b]).norm())
        .sum())
}

/// Vertices touched by at least one burned face, ascending.
pub fn burn_vertices(mesh: &LabeledMesh) -> Vec<usize> {
    let set: BTreeSet<usize> = mesh.burned_faces().flat_map(|f| mesh.mesh.faces[f]).collect();
    set.into_iter().collect()
}

/// Non-burned vertices within `hops` edges of the burn region, ascending.
pub fn healthy_ring(mesh: &LabeledMesh, hops: usize) -> Vec<usize> {
    let adjacency = mesh.mesh.vertex_neighbors();
    let n = mesh.mesh.vertices.len();
    let mut in_burn = vec![false; n];
    for v in burn_vertices(mesh) {
        in_burn[v] = true;
    }
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for v in 0..n {
        if in_burn[v] {
            dist[v] = 0;
            queue.push_back(v);
        }
    }
    while let Some(v) = queue.pop_front() {
        if dist[v] >= hops {
            continue;
        }
        for &w in &adjacency[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    (0..n).filter(|&v| !in_burn[v] && dist[v] <= hops).collect()
}

/// Mean unit normal of non-burned faces that touch any of `ring`.
pub fn ring_outward_normal(mesh: &LabeledMesh, ring: &[usize]) -> Option<Vector3<f64>> {
    let mut member = vec![false; mesh.mesh.vertices.len()];
    for &v in ring {
        member[v] = true;
    }
    let mut sum = Vector3::zeros();
    for (f, face) in mesh.mesh.faces.iter().enumerate() {
        if !mesh.burned[f] && face.iter().any(|&v| member[v]) {
            let n = mesh.mesh.scaled_normal(f);
            let len = n.norm();
            if len > 0.0 {
                sum += n / len;
            }
        }
    }
    let len = sum.norm();
    (len > 0.0).then(|| sum / len)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    #[default]
    Plane,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSurface {
    /// Outward unit normal of the fitted plane.
    pub normal: Vector3<f64>,
    pub p0: Vector3<f64>,
    pub residual_rms: f64,
    pub method: FitMethod,
    /// In-plane axes completing `normal` to a right-handed frame.
    pub axes: [Vector3<f64>; 2],
    /// `[a, b, c, d, e, f]` of `h = a u^2 + b u v + c v^2 + d u + e v + f`
    /// for the quadratic method.
    pub quadratic: Option<[f64; 6]>,
    /// Number of ring vertices kept after trimming.
    pub inliers: usize,
}

impl ReferenceSurface {
    /// Height of the reference above `p0` along the outward normal, at the
    /// in-plane position of `x`.
    pub fn height_at(&self, x: &Vector3<f64>) -> f64 {
        match self.quadratic {
            None => 0.0,
            Some(q) => {
                let d = x - self.p0;
                let (u, v) = (d.dot(&self.axes[0]), d.dot(&self.axes[1]));
                q[0] * u * u + q[1] * u * v + q[2] * v * v + q[3] * u + q[4] * v + q[5]
            }
        }
    }

    /// Signed depth below the reference, positive into the wound.
    pub fn depth(&self, x: &Vector3<f64>) -> f64 {
        self.height_at(x) - self.normal.dot(&(x - self.p0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub method: FitMethod,
    /// Refit after dropping residuals above `mad_factor` x MAD.
    pub trim: bool,
    pub mad_factor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: FitMethod::Plane,
            trim: true,
            mad_factor: 2.5,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Total-least-squares plane: centroid and unit normal (sign arbitrary).
fn tls_plane(points: &[Vector3<f64>]) -> Result<(Vector3<f64>, Vector3<f64>, [f64; 3]), MetricsError> {
    if points.len() < 3 {
        return Err(MetricsError::DegenerateFit(format!("{} points, need 3", points.len())));
    }
    let c = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let ev = [
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    ];
    if ev[1] <= 1e-20 * ev[0].max(f64::MIN_POSITIVE) || ev[0] == 0.0 {
        return Err(MetricsError::DegenerateFit("points are collinear or coincident".into()));
    }
    let normal: Vector3<f64> = eig.eigenvectors.column(order[2]).into();
    Ok((c, normal.normalize(), ev))
}

fn median_abs_residual(points: &[Vector3<f64>], c: &Vector3<f64>, n: &Vector3<f64>) -> f64 {
    let mut r: Vec<f64> = points.iter().map(|p| n.dot(&(p - c)).abs()).collect();
    median(&mut r)
}

/// Starting plane for trimming: the candidate with the smallest median
/// residual among the full fit and planes through seeded random triples.
fn least_median_start(points: &[Vector3<f64>], c: Vector3<f64>, n: Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    const TRIALS: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut best = (c, n);
    let mut best_score = median_abs_residual(points, &c, &n);
    for _ in 0..TRIALS {
        let idx = rand::seq::index::sample(&mut rng, points.len(), 3);
        let (a, b, d) = (points[idx.index(0)], points[idx.index(1)], points[idx.index(2)]);
        let normal = (b - a).cross(&(d - a));
        let len = normal.norm();
        if len <= 1e-12 * (b - a).norm().max((d - a).norm()).powi(2) {
            continue;
        }
        let normal = normal / len;
        let score = median_abs_residual(points, &a, &normal);
        if score < best_score {
            best_score = score;
            best = (a, normal);
        }
    }
    best
}

fn frame(normal: &Vector3<f64>) -> [Vector3<f64>; 2] {
    let helper = if normal.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = normal.cross(&helper).normalize();
    let v = normal.cross(&u);
    [u, v]
}

/// Fits the reference surface to healthy-ring vertices. `outward` orients
/// the normal; without it the normal points towards +z.
pub fn fit_reference_surface(
    points: &[Vector3<f64>],
    options: &FitOptions,
    outward: Option<&Vector3<f64>>,
) -> Result<ReferenceSurface, MetricsError> {
    let mut kept: Vec<usize> = (0..points.len()).collect();
    let subset = |idx: &[usize]| idx.iter().map(|&i| points[i]).collect::<Vec<_>>();
    let (mut c, mut n, _) = tls_plane(points)?;
    if options.trim {
        (c, n) = least_median_start(points, c, n);
        for _ in 0..10 {
            let residuals: Vec<f64> = points.iter().map(|p| n.dot(&(p - c)).abs()).collect();
            let mut r = residuals.clone();
            let med = median(&mut r);
            let mut dev: Vec<f64> = residuals.iter().map(|x| (x - med).abs()).collect();
            let mad = median(&mut dev);
            let scale = points.iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
            let limit = med + (options.mad_factor * mad).max(1e-12 * scale);
            let next: Vec<usize> = (0..points.len()).filter(|&i| residuals[i] <= limit).collect();
            if next == kept || next.len() < 3 {
                break;
            }
            match tls_plane(&subset(&next)) {
                Ok((c2, n2, _)) => {
                    c = c2;
                    n = n2;
                    kept = next;
                }
                Err(_) => break,
            }
        }
    }
    let hint = outward.copied().unwrap_or_else(Vector3::z);
    if n.dot(&hint) < 0.0 {
        n = -n;
    }
    let axes = frame(&n);
    let inlier_points = subset(&kept);

    let mut surface = ReferenceSurface {
        normal: n,
        p0: c,
        residual_rms: 0.0,
        method: options.method,
        axes,
        quadratic: None,
        inliers: kept.len(),
    };
    if options.method == FitMethod::Quadratic {
        if inlier_points.len() < 6 {
            return Err(MetricsError::DegenerateFit(format!(
                "quadratic fit needs 6 points, got {}",
                inlier_points.len()
            )));
        }
        let mut a = DMatrix::<f64>::zeros(inlier_points.len(), 6);
        let mut b = DVector::<f64>::zeros(inlier_points.len());
        for (i, p) in inlier_points.iter().enumerate() {
            let d = p - c;
            let (u, v) = (d.dot(&axes[0]), d.dot(&axes[1]));
            let row = [u * u, u * v, v * v, u, v, 1.0];
            for (j, x) in row.iter().enumerate() {
                a[(i, j)] = *x;
            }
            b[i] = d.dot(&n);
        }
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-10 * smax {
            return Err(MetricsError::DegenerateFit(
                "ring does not constrain a quadratic".into(),
            ));
        }
        let q = svd
            .solve(&b, 1e-12 * smax)
            .map_err(|e| MetricsError::DegenerateFit(e.to_string()))?;
        surface.quadratic = Some([q[0], q[1], q[2], q[3], q[4], q[5]]);
    }
    let ss: f64 = inlier_points.iter().map(|p| surface.depth(p).powi(2)).sum();
    surface.residual_rms = (ss / inlier_points.len() as f64).sqrt();
    Ok(surface)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthField {
    /// Signed depth of every mesh vertex in cm, positive into the wound.
    pub per_vertex_cm: Vec<f64>,
    pub burn_vertices: Vec<usize>,
    pub d_max_mm: f64,
    pub d_avg_mm: f64,
}

pub fn signed_depths(mesh: &LabeledMesh, reference: &ReferenceSurface) -> Result<DepthField, MetricsError> {
    let burn = burn_vertices(mesh);
    if burn.is_empty() {
        return Err(MetricsError::EmptyRegion);
    }
    let per_vertex_cm: Vec<f64> = mesh.mesh.vertices.iter().map(|v| reference.depth(v)).collect();
    let d_max = burn.iter().map(|&v| per_vertex_cm[v]).fold(f64::NEG_INFINITY, f64::max);
    let d_avg = burn.iter().map(|&v| per_vertex_cm[v]).sum::<f64>() / burn.len() as f64;
    Ok(DepthField {
        per_vertex_cm,
        burn_vertices: burn,
        d_max_mm: d_max * 10.0,
        d_avg_mm: d_avg * 10.0,
    })
}

/// Sum over burned faces of area times mean vertex depth, with negative face
/// contributions dropped.
pub fn volume_proxy(mesh: &LabeledMesh, depths: &DepthField) -> f64 {
    mesh.burned_faces()
        .map(|f| {
            let [a, b, c] = mesh.mesh.faces[f];
            let d = (depths.per_vertex_cm[a] + depths.per_vertex_cm[b] + depths.per_vertex_cm[c]) / 3.0;
            mesh.mesh.face_area(f) * d.max(0.0)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurnMetrics {
    pub area_cm2: f64,
    pub perimeter_cm: f64,
    pub d_max_mm: f64,
    pub d_avg_mm: f64,
    pub volume_proxy_cm3: f64,
    pub tbsa_percent: Option<f64>,
    pub computed_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsOptions {
    pub ring_hops: usize,
    pub fit: FitOptions,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            ring_hops: 2,
            fit: FitOptions::default(),
        }
    }
}

/// Metrics plus the intermediate reference and depth field.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub metrics: BurnMetrics,
    pub reference: Option<ReferenceSurface>,
    pub depths: Option<DepthField>,
}

/// Reference surface fitted to the healthy ring around the burn.
pub fn fit_ring_reference(mesh: &LabeledMesh, options: &MetricsOptions) -> Result<ReferenceSurface, MetricsError> {
    let ring = healthy_ring(mesh, options.ring_hops);
    let outward = ring_outward_normal(mesh, &ring);
    let pts: Vec<Vector3<f64>> = ring.iter().map(|&v| mesh.mesh.vertices[v]).collect();
    fit_reference_surface(&pts, &options.fit, outward.as_ref())
}

pub fn compute_burn_metrics(
    mesh: &LabeledMesh,
    options: &MetricsOptions,
    body_surface_area_cm2: Option<f64>,
    computed_at: DateTime<Utc>,
) -> Result<MetricsReport, MetricsError> {
    if mesh.mesh.units != Units::Cm {
        return Err(MetricsError::Unscaled(mesh.mesh.units.as_str()));
    }
    if let Some(bsa) = body_surface_area_cm2 {
        if !(bsa > 0.0 && bsa.is_finite()) {
            return Err(MetricsError::InvalidBsa(bsa));
        }
    }
    let area = burn_surface_area(mesh);
    let perimeter = burn_perimeter(mesh)?;
    let tbsa = body_surface_area_cm2.map(|bsa| 100.0 * area / bsa);
    if mesh.burned_faces().next().is_none() {
        return Ok(MetricsReport {
            metrics: BurnMetrics {
                area_cm2: 0.0,
                perimeter_cm: 0.0,
                d_max_mm: 0.0,
                d_avg_mm: 0.0,
                volume_proxy_cm3: 0.0,
                tbsa_percent: tbsa,
                computed_at,
            },
            reference: None,
            depths: None,
        });
    }
    let reference = fit_ring_reference(mesh, options)?;
    let depths = signed_depths(mesh, &reference)?;
    let volume = volume_proxy(mesh, &depths);
    Ok(MetricsReport {
        metrics: BurnMetrics {
            area_cm2: area,
            perimeter_cm: perimeter,
            d_max_mm: depths.d_max_mm,
            d_avg_mm: depths.d_avg_mm,
            volume_proxy_cm3: volume,
            tbsa_percent: tbsa,
            computed_at,
        },
        reference: Some(reference),
        depths: Some(depths),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriMesh;

    #[test]
    fn triangle_area_examples() {
        let o = Vector3::zeros();
        assert_eq!(triangle_area(&o, &Vector3::x(), &Vector3::y()), 0.5);
        assert_eq!(triangle_area(&o, &Vector3::x(), &(2.0 * Vector3::x())), 0.0);
        let s = 5.0;
        assert!((triangle_area(&o, &(s * Vector3::x()), &(s * Vector3::y())) - 12.5).abs() < 1e-12);
    }

    #[test]
    fn plane_fit_rejects_planted_outlier() {
        let mut pts: Vec<Vector3<f64>> = (0..24)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / 24.0;
                Vector3::new(2.0 * a.cos(), 2.0 * a.sin(), 0.0)
            })
            .collect();
        pts.push(Vector3::new(0.5, 0.5, 10.0));
        let s = fit_reference_surface(&pts, &FitOptions::default(), None).unwrap();
        assert!(s.residual_rms < 1e-6);
        assert!((s.normal - Vector3::z()).norm() < 1e-9);
        assert_eq!(s.inliers, 24);
    }

    #[test]
    fn collinear_ring_is_degenerate() {
        let pts = [Vector3::zeros(), Vector3::x(), 2.0 * Vector3::x()];
        assert!(matches!(
            fit_reference_surface(&pts, &FitOptions::default(), None),
            Err(MetricsError::DegenerateFit(_))
        ));
    }

    #[test]
    fn depth_sign_convention() {
        let pts: Vec<Vector3<f64>> = (0..8)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / 8.0;
                Vector3::new(a.cos(), a.sin(), 0.0)
            })
            .collect();
        let s = fit_reference_surface(&pts, &FitOptions::default(), Some(&Vector3::z())).unwrap();
        assert!((s.depth(&Vector3::new(0.0, 0.0, -0.3)) * 10.0 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn unscaled_mesh_rejected() {
        let mesh = TriMesh::new(
            vec![Vector3::zeros(), Vector3::x(), Vector3::y()],
            vec![[0, 1, 2]],
            Units::Arbitrary,
        )
        .unwrap();
        let labeled = LabeledMesh::uniform(mesh, true);
        assert!(matches!(
            compute_burn_metrics(&labeled, &MetricsOptions::default(), None, Utc::now()),
            Err(MetricsError::Unscaled("arbitrary"))
        ));
    }
}
