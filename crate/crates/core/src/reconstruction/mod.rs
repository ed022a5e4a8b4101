//! Sparse structure-from-motion: relative pose, triangulation, resection,
//! bundle adjustment, incremental reconstruction and metric scaling.

pub mod bundle;
pub mod export;
pub mod resection;
pub mod scale;
pub mod sfm;
pub mod similarity;
pub mod triangulate;
pub mod two_view;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraError;
use crate::units::Units;

pub use bundle::{bundle_adjust, BundleOptions, BundleReport, BundleResult, RobustLoss};
pub use resection::{resect_camera, Resection};
pub use scale::{apply_metric_scale, ScaleCalibration, ScaleReference};
pub use sfm::{reconstruct, SfmOptions, SfmResult};
pub use similarity::{fit_similarity, Similarity};
pub use triangulate::{triangulate_point, Triangulated};
pub use two_view::{estimate_two_view_pose, Correspondence, RansacParams, TwoViewEstimate};

#[derive(Debug, Error, PartialEq)]
pub enum ReconError {
    #[error("found {found} correspondences, at least {required} are required")]
    InsufficientMatches { found: usize, required: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("triangulation needs at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("observation references unknown view {0}")]
    UnknownView(usize),
    #[error("viewing rays are nearly parallel ({angle:.2e} rad)")]
    LowParallax { angle: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("scale reference points coincide (model distance {0:.3e})")]
    ZeroBaseline(f64),
    #[error("need at least {required} cameras, got {found}")]
    InsufficientCameras { found: usize, required: usize },
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// One sighting of a 3D point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub view: usize,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    pub position: Vector3<f64>,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseCloud {
    pub points: Vec<CloudPoint>,
    pub units: Units,
}

impl SparseCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn observation_count(&self) -> usize {
        self.points.iter().map(|p| p.observations.len()).sum()
    }

    /// Checks that every observation names one of `view_count` views and
    /// that every point is seen at least twice.
    pub fn validate(&self, view_count: usize) -> Result<(), ReconError> {
        for p in &self.points {
            if p.observations.len() < 2 {
                return Err(ReconError::TooFewObservations(p.observations.len()));
            }
            if let Some(o) = p.observations.iter().find(|o| o.view >= view_count) {
                return Err(ReconError::UnknownView(o.view));
            }
        }
        Ok(())
    }
}

/// Right singular vector of the smallest singular value, together with all
/// singular values in descending order. `m` must have at least as many rows
/// as columns.
pub(crate) fn null_vector(m: &DMatrix<f64>) -> (DVector<f64>, Vec<f64>) {
    debug_assert!(m.nrows() >= m.ncols());
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let last = *order.last().expect("non-empty matrix");
    let v = v_t.row(last).transpose();
    let singular = order.iter().map(|&i| svd.singular_values[i]).collect();
    (v, singular)
}
