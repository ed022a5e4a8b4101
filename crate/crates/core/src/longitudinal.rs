//! Rigid registration of serial reconstructions and change over time.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapping::LabeledMesh;
use crate::metrics::{burn_vertices, BurnMetrics};

#[derive(Debug, Error, PartialEq)]
pub enum LongitudinalError {
    #[error("degenerate correspondence set: {0}")]
    Degenerate(String),
    #[error("empty point cloud")]
    EmptyInput,
    #[error("series is empty")]
    EmptySeries,
    #[error("timepoints must be strictly increasing (day {previous} then {next})")]
    NonIncreasingDays { previous: f64, next: f64 },
    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "RigidRepr", try_from = "RigidRepr")]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct RigidRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<RigidTransform> for RigidRepr {
    fn from(t: RigidTransform) -> Self {
        let r = &t.rotation;
        RigidRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<RigidRepr> for RigidTransform {
    type Error = LongitudinalError;
    fn try_from(r: RigidRepr) -> Result<Self, Self::Error> {
        let rotation = Matrix3::from_fn(|i, j| r.rotation[i][j]);
        let t = RigidTransform {
            rotation,
            translation: Vector3::from(r.translation),
        };
        t.validate()?;
        Ok(t)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<(), LongitudinalError> {
        let defect = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        if !(defect <= 1e-9) {
            return Err(LongitudinalError::InvalidTransform(format!(
                "R^T R deviates from I by {defect:e}"
            )));
        }
        let det = self.rotation.determinant();
        if !((det - 1.0).abs() <= 1e-9) {
            return Err(LongitudinalError::InvalidTransform(format!("det(R) = {det}")));
        }
        if !self.translation.iter().all(|x| x.is_finite()) {
            return Err(LongitudinalError::InvalidTransform("non-finite translation".into()));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self` after `first`.
    pub fn after(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Least-squares rotation and translation taking `source[i]` onto
/// `target[i]`.
pub fn rigid_fit_svd(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<RigidTransform, LongitudinalError> {
    if source.len() != target.len() {
        return Err(LongitudinalError::Degenerate(format!(
            "{} source points but {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(LongitudinalError::Degenerate(format!("{} pairs, need 3", source.len())));
    }
    let n = source.len() as f64;
    let sc = source.iter().sum::<Vector3<f64>>() / n;
    let tc = target.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let ds = s - sc;
        h += ds * (t - tc).transpose();
        spread += ds * ds.transpose();
    }
    let mut ev: Vec<f64> = spread.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[1] > 1e-18 * ev[0].max(f64::MIN_POSITIVE)) {
        return Err(LongitudinalError::Degenerate("source points are collinear".into()));
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let mut v = svd.v_t.expect("requested V^T").transpose();
    if (v * u.transpose()).determinant() < 0.0 {
        let smallest = svd.singular_values.imin();
        let col = -v.column(smallest);
        v.set_column(smallest, &col);
    }
    let rotation = v * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: tc - rotation * sc,
    })
}

pub fn nearest_brute_force(points: &[Vector3<f64>], query: &Vector3<f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = (p - query).norm_squared();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best
}

/// Exact nearest-neighbour index over a uniform grid. Ties resolve to the
/// lowest point index, as in [`nearest_brute_force`].
pub struct PointGrid<'a> {
    points: &'a [Vector3<f64>],
    origin: Vector3<f64>,
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl<'a> PointGrid<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Result<Self, LongitudinalError> {
        if points.is_empty() {
            return Err(LongitudinalError::EmptyInput);
        }
        let mut min = points[0];
        let mut max = points[0];
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        let extent = (max - min).max();
        let per_axis = (points.len() as f64).cbrt().max(1.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let mut grid = PointGrid {
            points,
            origin: min,
            cell,
            cells: HashMap::new(),
            lo: [i64::MAX; 3],
            hi: [i64::MIN; 3],
        };
        for (i, p) in points.iter().enumerate() {
            let key = grid.key(p);
            for a in 0..3 {
                grid.lo[a] = grid.lo[a].min(key[a]);
                grid.hi[a] = grid.hi[a].max(key[a]);
            }
            grid.cells.entry(key).or_default().push(i);
        }
        Ok(grid)
    }

    fn key(&self, p: &Vector3<f64>) -> [i64; 3] {
        let r = (p - self.origin) / self.cell;
        [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64]
    }

    /// Index of the closest point and its squared distance.
    pub fn nearest(&self, query: &Vector3<f64>) -> (usize, f64) {
        let c = self.key(query);
        let max_ring = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        let mut best: Option<(usize, f64)> = None;
        let consider = |best: &mut Option<(usize, f64)>, idx: &[usize]| {
            for &i in idx {
                let d = (self.points[i] - query).norm_squared();
                let better = match *best {
                    None => true,
                    Some((bi, bd)) => d < bd || (d == bd && i < bi),
                };
                if better {
                    *best = Some((i, d));
                }
            }
        };
        for r in 0..=max_ring {
            for dx in -r..=r {
                for dy in -r..=r {
                    let on_shell_xy = dx.abs() == r || dy.abs() == r;
                    let dzs: Vec<i64> = if on_shell_xy {
                        (-r..=r).collect()
                    } else if r == 0 {
                        vec![0]
                    } else {
                        vec![-r, r]
                    };
                    for dz in dzs {
                        if let Some(idx) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            consider(&mut best, idx);
                        }
                    }
                }
            }
            if let Some((_, bd)) = best {
                // Every point in ring r + 1 or beyond is at least r cells away.
                let reach = r as f64 * self.cell * (1.0 - 1e-9);
                if bd.sqrt() < reach {
                    break;
                }
            }
        }
        best.expect("grid is non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop once RMS improves by less than this.
    pub tolerance: f64,
    /// Drop pairs farther than `trim_factor` x the median pair distance.
    pub trim: bool,
    pub trim_factor: f64,
    pub initial: RigidTransform,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-8,
            trim: false,
            trim_factor: 3.0,
            initial: RigidTransform::identity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub rms: f64,
    pub iterations: usize,
    /// RMS at the initial transform followed by one entry per accepted
    /// iteration.
    pub rms_trace: Vec<f64>,
    pub converged: bool,
}

struct Pairing {
    source: Vec<Vector3<f64>>,
    target: Vec<Vector3<f64>>,
    rms: f64,
}

fn pair_up(moved: &[Vector3<f64>], grid: &PointGrid, target: &[Vector3<f64>], params: &IcpParams) -> Pairing {
    let nn: Vec<(usize, f64)> = moved.par_iter().map(|p| grid.nearest(p)).collect();
    let limit = if params.trim {
        let mut d: Vec<f64> = nn.iter().map(|x| x.1.sqrt()).collect();
        d.sort_by(f64::total_cmp);
        let m = d.len();
        let median = if m % 2 == 1 {
            d[m / 2]
        } else {
            0.5 * (d[m / 2 - 1] + d[m / 2])
        };
        params.trim_factor * median
    } else {
        f64::INFINITY
    };
    let mut source = Vec::with_capacity(moved.len());
    let mut tgt = Vec::with_capacity(moved.len());
    let mut ss = 0.0;
    for (p, &(i, d2)) in moved.iter().zip(&nn) {
        if d2.sqrt() <= limit {
            source.push(*p);
            tgt.push(target[i]);
            ss += d2;
        }
    }
    let rms = if source.is_empty() {
        0.0
    } else {
        (ss / source.len() as f64).sqrt()
    };
    Pairing {
        source,
        target: tgt,
        rms,
    }
}

/// Aligns `source` onto `target`. Steps that would raise the RMS are not
/// taken, so the trace never increases.
pub fn icp_align(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    params: &IcpParams,
) -> Result<IcpResult, LongitudinalError> {
    if source.is_empty() || target.is_empty() {
        return Err(LongitudinalError::EmptyInput);
    }
    params.initial.validate()?;
    let grid = PointGrid::new(target)?;
    let mut transform = params.initial;
    let moved: Vec<Vector3<f64>> = source.iter().map(|p| transform.apply(p)).collect();
    let mut pairing = pair_up(&moved, &grid, target, params);
    let mut trace = vec![pairing.rms];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iterations {
        if pairing.rms == 0.0 {
            iterations += 1;
            trace.push(0.0);
            converged = true;
            break;
        }
        let step = rigid_fit_svd(&pairing.source, &pairing.target)?;
        let candidate = step.after(&transform);
        let moved: Vec<Vector3<f64>> = source.iter().map(|p| candidate.apply(p)).collect();
        let next = pair_up(&moved, &grid, target, params);
        if next.rms > pairing.rms {
            converged = true;
            break;
        }
        iterations += 1;
        let improvement = pairing.rms - next.rms;
        transform = candidate;
        pairing = next;
        trace.push(pairing.rms);
        if improvement < params.tolerance {
            converged = true;
            break;
        }
    }
    Ok(IcpResult {
        transform,
        rms: pairing.rms,
        iterations,
        rms_trace: trace,
        converged,
    })
}

/// Vertices outside the burn region, or every vertex when nothing else is
/// left.
pub fn alignment_points(mesh: &LabeledMesh) -> Vec<Vector3<f64>> {
    let burn = burn_vertices(mesh);
    let mut in_burn = vec![false; mesh.mesh.vertices.len()];
    for v in burn {
        in_burn[v] = true;
    }
    let healthy: Vec<Vector3<f64>> = mesh
        .mesh
        .vertices
        .iter()
        .zip(&in_burn)
        .filter(|(_, b)| !**b)
        .map(|(v, _)| *v)
        .collect();
    if healthy.len() >= 3 {
        healthy
    } else {
        mesh.mesh.vertices.clone()
    }
}

/// Alignment result as stored with a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub transform: RigidTransform,
    pub rms: f64,
    pub iterations: usize,
}

impl From<&IcpResult> for AlignmentRecord {
    fn from(r: &IcpResult) -> Self {
        Self {
            transform: r.transform,
            rms: r.rms,
            iterations: r.iterations,
        }
    }
}

/// Fractional days from `baseline` to `t`.
pub fn days_between(baseline: DateTime<Utc>, t: DateTime<Utc>) -> f64 {
    (t - baseline).num_milliseconds() as f64 / 86_400_000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub day: f64,
    pub metrics: BurnMetrics,
    #[serde(default)]
    pub alignment: Option<AlignmentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timepoint {
    pub day: f64,
    pub metrics: BurnMetrics,
    pub alignment: Option<AlignmentRecord>,
    pub delta_area_cm2: f64,
    pub delta_d_max_mm: f64,
    pub delta_volume_cm3: f64,
    /// `100 * delta_area / baseline_area`; absent for a zero baseline.
    pub percent_area_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealingSeries {
    pub timepoints: Vec<Timepoint>,
    /// Negated slope of the least-squares area line, cm^2 per day.
    pub healing_rate_cm2_per_day: Option<f64>,
    pub projected_recovery_day: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn compute_deltas(entries: &[SeriesEntry]) -> Result<HealingSeries, LongitudinalError> {
    let base = entries.first().ok_or(LongitudinalError::EmptySeries)?;
    for w in entries.windows(2) {
        if !(w[1].day > w[0].day) {
            return Err(LongitudinalError::NonIncreasingDays {
                previous: w[0].day,
                next: w[1].day,
            });
        }
    }
    let a0 = base.metrics.area_cm2;
    let mut warnings = Vec::new();
    if a0 == 0.0 && entries.iter().any(|e| e.metrics.area_cm2 != 0.0) {
        warnings.push("baseline area is zero; percent change omitted".to_string());
    }
    let timepoints = entries
        .iter()
        .map(|e| {
            let da = e.metrics.area_cm2 - a0;
            Timepoint {
                day: e.day,
                metrics: e.metrics.clone(),
                alignment: e.alignment.clone(),
                delta_area_cm2: da,
                delta_d_max_mm: e.metrics.d_max_mm - base.metrics.d_max_mm,
                delta_volume_cm3: e.metrics.volume_proxy_cm3 - base.metrics.volume_proxy_cm3,
                percent_area_change: (a0 > 0.0).then(|| 100.0 * da / a0),
            }
        })
        .collect();

    let (mut rate, mut projection) = (None, None);
    if entries.len() >= 2 {
        let n = entries.len() as f64;
        let day_mean = entries.iter().map(|e| e.day).sum::<f64>() / n;
        let area_mean = entries.iter().map(|e| e.metrics.area_cm2).sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for e in entries {
            let dx = e.day - day_mean;
            sxy += dx * (e.metrics.area_cm2 - area_mean);
            sxx += dx * dx;
        }
        let slope = sxy / sxx;
        rate = Some(-slope);
        if slope < 0.0 {
            projection = Some(day_mean - area_mean / slope);
        }
    }
    Ok(HealingSeries {
        timepoints,
        healing_rate_cm2_per_day: rate,
        projected_recovery_day: projection,
        warnings,
    })
}

impl HealingSeries {
    /// Delimited table with a header row.
    pub fn to_table(&self, delimiter: char) -> String {
        let d = delimiter;
        let mut out = format!("day{d}area_cm2{d}d_max_mm{d}volume_cm3{d}delta_area_cm2{d}percent_area_change\n");
        for t in &self.timepoints {
            let pct = t.percent_area_change.map(|p| p.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{}{d}{}{d}{}{d}{}{d}{}{d}{}\n",
                t.day, t.metrics.area_cm2, t.metrics.d_max_mm, t.metrics.volume_proxy_cm3, t.delta_area_cm2, pct
            ));
        }
        out
    }
}
