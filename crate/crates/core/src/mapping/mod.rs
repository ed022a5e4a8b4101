//! Burn masks, ray casting and multi-view painting of burn probability onto
//! mesh faces.

mod mask;
mod ray;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraView;
use crate::mesh::{MeshError, TriMesh};

pub use mask::{evaluate_mask, BurnMask, MaskScores, BCE_CLAMP};
pub use ray::{cast_pixel_ray, intersect_ray_mesh, intersect_triangle, Bvh, Hit, Ray};

#[derive(Debug, Error, PartialEq)]
pub enum MappingError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("probability {0} outside [0, 1]")]
    Domain(f64),
    #[error("mask decode failed: {0}")]
    Decode(String),
    #[error("no face is visible from any view")]
    EmptyVisibility,
    #[error("{views} views but {masks} masks")]
    CountMismatch { views: usize, masks: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// `1 - prod(1 - p)`; zero for no inputs.
pub fn fuse_view_probabilities(ps: &[f64]) -> Result<f64, MappingError> {
    let mut keep = 1.0;
    for &p in ps {
        if !(0.0..=1.0).contains(&p) {
            return Err(MappingError::Domain(p));
        }
        keep *= 1.0 - p;
    }
    Ok(1.0 - keep)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Burned when the fused probability reaches the threshold.
    #[default]
    Fusion,
    /// Burned when any single view's probability reaches the threshold.
    AnyHit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    pub label_threshold: f64,
    pub rule: LabelRule,
    /// Views a burned face must be seen from to count as covered.
    pub coverage_min_views: u32,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            label_threshold: 0.5,
            rule: LabelRule::Fusion,
            coverage_min_views: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMesh {
    pub mesh: TriMesh,
    pub face_probability: Vec<f64>,
    /// Number of views that see each face.
    pub visibility: Vec<u32>,
    pub burned: Vec<bool>,
}

impl LabeledMesh {
    /// Labels every face with `P >= threshold`; visibility is left at zero.
    pub fn from_probabilities(mesh: TriMesh, face_probability: Vec<f64>, threshold: f64) -> Result<Self, MappingError> {
        if face_probability.len() != mesh.faces.len() {
            return Err(MappingError::Shape(format!(
                "{} probabilities for {} faces",
                face_probability.len(),
                mesh.faces.len()
            )));
        }
        if let Some(p) = face_probability.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(MappingError::Domain(*p));
        }
        mesh.validate()?;
        let burned = face_probability.iter().map(|&p| p >= threshold).collect();
        let visibility = vec![0; mesh.faces.len()];
        Ok(Self {
            mesh,
            face_probability,
            visibility,
            burned,
        })
    }

    /// Every face burned (or none).
    pub fn uniform(mesh: TriMesh, burned: bool) -> Self {
        let n = mesh.faces.len();
        let p = if burned { 1.0 } else { 0.0 };
        Self {
            mesh,
            face_probability: vec![p; n],
            visibility: vec![0; n],
            burned: vec![burned; n],
        }
    }

    pub fn burned_faces(&self) -> impl Iterator<Item = usize> + '_ {
        self.burned.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    /// Share of burned faces seen from at least `k` views (0 with no burn).
    pub fn coverage(&self, k: u32) -> f64 {
        let burned: Vec<usize> = self.burned_faces().collect();
        if burned.is_empty() {
            return 0.0;
        }
        burned.iter().filter(|&&f| self.visibility[f] >= k).count() as f64 / burned.len() as f64
    }

    pub fn to_ply(&self) -> String {
        crate::mesh::write_ply(&self.mesh, Some(&self.face_probability), None)
    }
}

/// Whether the centroid of `face` is the first surface point met along the
/// ray from the camera centre, and if so its pixel in that view.
fn visible_pixel(bvh: &Bvh, view: &CameraView, face: usize) -> Option<nalgebra::Vector2<f64>> {
    let c: Vector3<f64> = bvh.mesh().centroid(face);
    let px = view.camera.project(&c).ok()?;
    let (w, h) = (view.width as f64, view.height as f64);
    if !(px.x >= -0.5 && px.y >= -0.5 && px.x <= w - 0.5 && px.y <= h - 0.5) {
        return None;
    }
    let origin = view.camera.pose.center();
    let ray = Ray::new(origin, c - origin);
    (bvh.intersect(&ray)?.face == face).then_some(px)
}

/// Projects every face centroid into every view, keeps the views in which
/// it is unoccluded, and fuses the sampled mask probabilities.
pub fn paint_mesh(
    mesh: &TriMesh,
    views: &[CameraView],
    masks: &[BurnMask],
    params: &FusionParams,
) -> Result<LabeledMesh, MappingError> {
    if views.len() != masks.len() {
        return Err(MappingError::CountMismatch {
            views: views.len(),
            masks: masks.len(),
        });
    }
    for (i, (v, m)) in views.iter().zip(masks).enumerate() {
        if v.width as usize != m.width || v.height as usize != m.height {
            return Err(MappingError::Shape(format!(
                "view {i} is {}x{} but its mask is {}x{}",
                v.width, v.height, m.width, m.height
            )));
        }
    }
    mesh.validate()?;
    let bvh = Bvh::new(mesh);
    let per_face: Vec<(f64, u32, bool)> = (0..mesh.faces.len())
        .into_par_iter()
        .map(|face| {
            let samples: Vec<f64> = views
                .iter()
                .zip(masks)
                .filter_map(|(v, m)| visible_pixel(&bvh, v, face).map(|px| m.sample(px.x, px.y)))
                .collect();
            let p = fuse_view_probabilities(&samples).expect("mask values lie in [0, 1]");
            let burned = match params.rule {
                LabelRule::Fusion => p >= params.label_threshold,
                LabelRule::AnyHit => samples.iter().any(|&s| s >= params.label_threshold),
            };
            (p, samples.len() as u32, burned)
        })
        .collect();
    if per_face.iter().all(|(_, v, _)| *v == 0) {
        return Err(MappingError::EmptyVisibility);
    }
    Ok(LabeledMesh {
        mesh: mesh.clone(),
        face_probability: per_face.iter().map(|x| x.0).collect(),
        visibility: per_face.iter().map(|x| x.1).collect(),
        burned: per_face.iter().map(|x| x.2).collect(),
    })
}
