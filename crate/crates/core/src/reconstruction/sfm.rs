//! Incremental sparse reconstruction from per-image features.

use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CameraIntrinsics, CameraPose};
use crate::features::{match_descriptors, mutual_matches, ImageFeatures, Match};

use super::bundle::{bundle_adjust, BundleOptions, BundleReport};
use super::resection::resect_camera;
use super::triangulate::triangulate_point;
use super::two_view::{estimate_two_view_pose, Correspondence, RansacParams};
use super::{CloudPoint, Observation, ReconError, SparseCloud};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SfmOptions {
    pub ratio_threshold: f64,
    /// Keep only mutual nearest neighbours.
    pub mutual: bool,
    pub ransac: RansacParams,
    /// Verified inliers needed before a pair contributes tracks.
    pub min_pair_inliers: usize,
    /// Minimum ray angle for a new point, degrees.
    pub min_triangulation_angle_deg: f64,
    /// Observations reprojecting worse than this are discarded.
    pub max_reprojection_px: f64,
    /// Minimum 2D-3D correspondences to register a view.
    pub min_resection_points: usize,
    pub bundle: BundleOptions,
}

impl Default for SfmOptions {
    fn default() -> Self {
        Self {
            ratio_threshold: 0.75,
            mutual: true,
            ransac: RansacParams::default(),
            min_pair_inliers: 30,
            min_triangulation_angle_deg: 1.0,
            max_reprojection_px: 4.0,
            min_resection_points: 12,
            bundle: BundleOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfmResult {
    /// One entry per input view; `None` when the view could not be registered.
    pub cameras: Vec<Option<Camera>>,
    pub cloud: SparseCloud,
    pub initial_pair: (usize, usize),
    pub report: BundleReport,
    /// Ratio-test survivors summed over all image pairs.
    pub matched_features: usize,
    /// Geometrically verified share of those matches.
    pub inlier_ratio: f64,
}

impl SfmResult {
    pub fn registered_views(&self) -> Vec<usize> {
        self.cameras
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|_| i))
            .collect()
    }
}

struct VerifiedPair {
    a: usize,
    b: usize,
    /// Keypoint index pairs that survived geometric verification.
    matches: Vec<(usize, usize)>,
    pose: CameraPose,
    median_angle: f64,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Feature tracks: lists of `(view, keypoint)` with at most one keypoint per
/// view. Components that claim two keypoints in one view are discarded.
fn build_tracks(features: &[ImageFeatures], pairs: &[VerifiedPair]) -> Vec<Vec<(usize, usize)>> {
    let offsets: Vec<usize> = features
        .iter()
        .scan(0, |acc, f| {
            let o = *acc;
            *acc += f.len();
            Some(o)
        })
        .collect();
    let total: usize = features.iter().map(|f| f.len()).sum();
    let mut parent: Vec<usize> = (0..total).collect();
    let mut touched = vec![false; total];
    for p in pairs {
        for &(ka, kb) in &p.matches {
            let (x, y) = (offsets[p.a] + ka, offsets[p.b] + kb);
            touched[x] = true;
            touched[y] = true;
            let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
            if rx != ry {
                parent[rx.max(ry)] = rx.min(ry);
            }
        }
    }
    let mut groups: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    for (view, f) in features.iter().enumerate() {
        for k in 0..f.len() {
            let node = offsets[view] + k;
            if touched[node] {
                let root = find(&mut parent, node);
                groups.entry(root).or_default().push((view, k));
            }
        }
    }
    let mut tracks: Vec<Vec<(usize, usize)>> = groups
        .into_values()
        .filter(|t| t.len() >= 2 && t.windows(2).all(|w| w[0].0 != w[1].0))
        .collect();
    tracks.sort();
    tracks
}

struct Track {
    nodes: Vec<(usize, usize)>,
    point: Option<Vector3<f64>>,
    /// Views whose observation is part of the current estimate.
    used: Vec<usize>,
}

struct State<'a> {
    features: &'a [ImageFeatures],
    cameras: Vec<Option<Camera>>,
    tracks: Vec<Track>,
    /// Registration order; the first entry anchors the gauge.
    order: Vec<usize>,
}

impl State<'_> {
    fn pixel(&self, view: usize, kp: usize) -> Vector2<f64> {
        let k = &self.features[view].keypoints[kp];
        Vector2::new(k.x, k.y)
    }

    fn registered_cameras(&self) -> Vec<Camera> {
        self.cameras
            .iter()
            .map(|c| c.unwrap_or_else(|| Camera::new(dummy_k(), CameraPose::identity())))
            .collect()
    }

    /// Triangulates every track with no point yet that is seen by at least
    /// two registered views.
    fn triangulate_new(&mut self, options: &SfmOptions) {
        let cams = self.registered_cameras();
        let min_angle = options.min_triangulation_angle_deg.to_radians();
        for t in 0..self.tracks.len() {
            if self.tracks[t].point.is_some() {
                continue;
            }
            let obs: Vec<(usize, Vector2<f64>)> = self.tracks[t]
                .nodes
                .iter()
                .filter(|(v, _)| self.cameras[*v].is_some())
                .map(|&(v, k)| (v, self.pixel(v, k)))
                .collect();
            if obs.len() < 2 {
                continue;
            }
            let Ok(tri) = triangulate_point(&obs, &cams) else {
                continue;
            };
            if tri.parallax < min_angle {
                continue;
            }
            let used: Vec<usize> = obs
                .iter()
                .zip(&tri.reprojection_errors)
                .filter(|(_, e)| **e < options.max_reprojection_px)
                .map(|((v, _), _)| *v)
                .collect();
            if used.len() >= 2 && used.len() == obs.len() {
                self.tracks[t].point = Some(tri.position);
                self.tracks[t].used = used;
            }
        }
    }

    /// Adds observations from newly registered views to existing points.
    fn extend_tracks(&mut self, view: usize, options: &SfmOptions) {
        let Some(cam) = self.cameras[view] else { return };
        for t in 0..self.tracks.len() {
            let Some(x) = self.tracks[t].point else { continue };
            if self.tracks[t].used.contains(&view) {
                continue;
            }
            if let Some(&(_, k)) = self.tracks[t].nodes.iter().find(|(v, _)| *v == view) {
                let px = self.pixel(view, k);
                if let Ok(p) = cam.project(&x) {
                    if (p - px).norm() < options.max_reprojection_px {
                        self.tracks[t].used.push(view);
                    }
                }
            }
        }
    }

    fn cloud(&self) -> (SparseCloud, Vec<usize>) {
        let mut ids = Vec::new();
        let mut points = Vec::new();
        for (i, t) in self.tracks.iter().enumerate() {
            let Some(x) = t.point else { continue };
            let mut observations: Vec<Observation> = t
                .nodes
                .iter()
                .filter(|(v, _)| t.used.contains(v))
                .map(|&(v, k)| Observation {
                    view: v,
                    pixel: self.pixel(v, k),
                })
                .collect();
            observations.sort_by_key(|o| o.view);
            points.push(CloudPoint {
                position: x,
                observations,
            });
            ids.push(i);
        }
        (
            SparseCloud {
                points,
                units: Default::default(),
            },
            ids,
        )
    }

    /// Bundle-adjusts all registered views, then drops observations that
    /// still reproject badly. Returns the report of the adjustment.
    fn adjust(&mut self, options: &SfmOptions) -> Result<BundleReport, ReconError> {
        let (cloud, ids) = self.cloud();
        // compact view numbering in registration order
        let mut to_local = vec![usize::MAX; self.cameras.len()];
        for (l, &v) in self.order.iter().enumerate() {
            to_local[v] = l;
        }
        let local_cams: Vec<Camera> = self
            .order
            .iter()
            .map(|&v| self.cameras[v].expect("registered"))
            .collect();
        let mut local = cloud.clone();
        for p in &mut local.points {
            for o in &mut p.observations {
                o.view = to_local[o.view];
            }
        }
        let res = bundle_adjust(&local, &local_cams, &options.bundle)?;
        for (l, &v) in self.order.iter().enumerate() {
            self.cameras[v] = Some(res.cameras[l]);
        }
        for (p, &id) in res.cloud.points.iter().zip(&ids) {
            self.tracks[id].point = Some(p.position);
        }

        // outlier filtering
        for &id in &ids {
            let x = self.tracks[id].point.expect("point");
            let nodes = self.tracks[id].nodes.clone();
            let cams = &self.cameras;
            let features = self.features;
            self.tracks[id].used.retain(|&v| {
                let k = nodes.iter().find(|(nv, _)| *nv == v).expect("node").1;
                let kp = &features[v].keypoints[k];
                match cams[v].expect("registered").project(&x) {
                    Ok(p) => (p - Vector2::new(kp.x, kp.y)).norm() < options.max_reprojection_px,
                    Err(_) => false,
                }
            });
            if self.tracks[id].used.len() < 2 {
                self.tracks[id].point = None;
                self.tracks[id].used.clear();
            }
        }
        Ok(res.report)
    }
}

fn dummy_k() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 1.0,
        fy: 1.0,
        cx: 0.0,
        cy: 0.0,
        skew: 0.0,
    }
}

fn pair_matches(fa: &ImageFeatures, fb: &ImageFeatures, options: &SfmOptions) -> Vec<Match> {
    if fa.descriptors.len() < 2 || fb.descriptors.len() < 2 {
        return Vec::new();
    }
    let found = if options.mutual {
        mutual_matches(&fa.descriptors, &fb.descriptors, options.ratio_threshold)
    } else {
        match_descriptors(&fa.descriptors, &fb.descriptors, options.ratio_threshold)
            .map(|m| m.into_iter().filter(|m| m.passed_ratio).collect())
    };
    found.unwrap_or_default()
}

/// Full incremental reconstruction. `intrinsics[i]` belongs to view `i`.
pub fn reconstruct(
    features: &[ImageFeatures],
    intrinsics: &[CameraIntrinsics],
    options: &SfmOptions,
) -> Result<SfmResult, ReconError> {
    let n = features.len();
    if n < 2 || intrinsics.len() != n {
        return Err(ReconError::InsufficientCameras {
            found: n.min(intrinsics.len()),
            required: 2,
        });
    }

    let mut matched_total = 0usize;
    let mut verified_total = 0usize;
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let m = pair_matches(&features[a], &features[b], options);
            matched_total += m.len();
            if m.len() < 8 {
                continue;
            }
            let corr: Vec<Correspondence> = m
                .iter()
                .map(|m| {
                    let (ka, kb) = (&features[a].keypoints[m.index_a], &features[b].keypoints[m.index_b]);
                    Correspondence::new(Vector2::new(ka.x, ka.y), Vector2::new(kb.x, kb.y))
                })
                .collect();
            let Ok(est) = estimate_two_view_pose(&corr, &intrinsics[a], &intrinsics[b], &options.ransac) else {
                continue;
            };
            if est.inliers.len() < options.min_pair_inliers {
                continue;
            }
            verified_total += est.inliers.len();
            pairs.push(VerifiedPair {
                a,
                b,
                matches: est.inliers.iter().map(|&i| (m[i].index_a, m[i].index_b)).collect(),
                pose: est.pose,
                median_angle: est.median_triangulation_angle,
            });
        }
    }
    let best = pairs
        .iter()
        .max_by(|x, y| {
            let sx = x.matches.len() as f64 * x.median_angle;
            let sy = y.matches.len() as f64 * y.median_angle;
            sx.total_cmp(&sy).then((y.a, y.b).cmp(&(x.a, x.b)))
        })
        .ok_or_else(|| {
            ReconError::DegenerateGeometry(format!(
                "no image pair has {} or more verified matches",
                options.min_pair_inliers
            ))
        })?;
    let (a0, b0) = (best.a, best.b);
    let init_pose = best.pose;

    let tracks = build_tracks(features, &pairs)
        .into_iter()
        .map(|nodes| Track {
            nodes,
            point: None,
            used: Vec::new(),
        })
        .collect();
    let mut state = State {
        features,
        cameras: vec![None; n],
        tracks,
        order: vec![a0, b0],
    };
    state.cameras[a0] = Some(Camera::new(intrinsics[a0], CameraPose::identity()));
    state.cameras[b0] = Some(Camera::new(intrinsics[b0], init_pose));
    state.triangulate_new(options);
    let seeded = state.tracks.iter().filter(|t| t.point.is_some()).count();
    if seeded < 8 {
        return Err(ReconError::DegenerateGeometry(format!(
            "initial pair ({a0}, {b0}) triangulated only {seeded} points"
        )));
    }
    state.adjust(options)?;

    loop {
        // next view: most 2D-3D correspondences, lowest index on ties
        let mut candidate: Option<(usize, Vec<(Vector3<f64>, Vector2<f64>)>)> = None;
        for v in 0..n {
            if state.cameras[v].is_some() {
                continue;
            }
            let corr: Vec<(Vector3<f64>, Vector2<f64>)> = state
                .tracks
                .iter()
                .filter_map(|t| {
                    let x = t.point?;
                    let &(_, k) = t.nodes.iter().find(|(tv, _)| *tv == v)?;
                    Some((x, state.pixel(v, k)))
                })
                .collect();
            if corr.len() >= options.min_resection_points
                && candidate.as_ref().is_none_or(|(_, c)| corr.len() > c.len())
            {
                candidate = Some((v, corr));
            }
        }
        let Some((v, corr)) = candidate else { break };
        let pts: Vec<_> = corr.iter().map(|c| c.0).collect();
        let px: Vec<_> = corr.iter().map(|c| c.1).collect();
        let mut ransac = options.ransac.clone();
        ransac.threshold_px = options.max_reprojection_px;
        match resect_camera(&intrinsics[v], &pts, &px, &ransac) {
            Ok(r) if r.inliers.len() >= options.min_resection_points => {
                state.cameras[v] = Some(Camera::new(intrinsics[v], r.pose));
                state.order.push(v);
            }
            _ => {
                // Mark as attempted by giving up on this view.
                for t in &mut state.tracks {
                    t.nodes.retain(|(tv, _)| *tv != v);
                }
                continue;
            }
        }
        state.extend_tracks(v, options);
        state.triangulate_new(options);
        state.adjust(options)?;
    }
    // final polish after the last outlier sweep
    let report = state.adjust(options)?;

    let (cloud, _) = state.cloud();
    Ok(SfmResult {
        cameras: state.cameras,
        cloud,
        initial_pair: (a0, b0),
        report,
        matched_features: matched_total,
        inlier_ratio: if matched_total > 0 {
            verified_total as f64 / matched_total as f64
        } else {
            0.0
        },
    })
}
