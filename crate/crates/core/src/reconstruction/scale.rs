//! Metric scale from a reference of known physical length.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::units::Units;

use super::triangulate::triangulate_point;
use super::{ReconError, SparseCloud};

/// Geometry that can be uniformly scaled into centimetres.
pub trait MetricScalable: Sized {
    /// Multiplies every coordinate by `s` and marks the result as cm.
    fn scaled_to_cm(&self, s: f64) -> Self;
}

impl MetricScalable for SparseCloud {
    fn scaled_to_cm(&self, s: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            p.position *= s;
        }
        out.units = Units::Cm;
        out
    }
}

impl MetricScalable for Vec<Camera> {
    /// Camera centres move with the points, so translations scale too and
    /// every reprojection is unchanged.
    fn scaled_to_cm(&self, s: f64) -> Self {
        self.iter()
            .map(|c| {
                let mut c = *c;
                c.pose.translation *= s;
                c
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleCalibration {
    pub p1: Vector3<f64>,
    pub p2: Vector3<f64>,
    pub known_distance_cm: f64,
    pub model_distance: f64,
    pub scale: f64,
}

impl ScaleCalibration {
    pub fn from_points(p1: Vector3<f64>, p2: Vector3<f64>, known_distance_cm: f64) -> Result<Self, ReconError> {
        let model_distance = (p2 - p1).norm();
        if !(model_distance > 0.0) {
            return Err(ReconError::ZeroBaseline(model_distance));
        }
        if !(known_distance_cm > 0.0 && known_distance_cm.is_finite()) {
            return Err(ReconError::DegenerateGeometry(format!(
                "reference length must be positive, got {known_distance_cm}"
            )));
        }
        Ok(Self {
            p1,
            p2,
            known_distance_cm,
            model_distance,
            scale: known_distance_cm / model_distance,
        })
    }
}

/// Two endpoints designated in `view_a` with their counterparts in `view_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleReference {
    pub view_a: usize,
    pub view_b: usize,
    pub endpoints_a: [Vector2<f64>; 2],
    pub endpoints_b: [Vector2<f64>; 2],
    pub known_distance_cm: f64,
}

impl ScaleReference {
    /// Lifts both endpoints to 3D and forms the calibration.
    pub fn calibrate(&self, cameras: &[Camera]) -> Result<ScaleCalibration, ReconError> {
        let lift = |i: usize| {
            triangulate_point(
                &[(self.view_a, self.endpoints_a[i]), (self.view_b, self.endpoints_b[i])],
                cameras,
            )
            .map(|t| t.position)
        };
        ScaleCalibration::from_points(lift(0)?, lift(1)?, self.known_distance_cm)
    }
}

pub fn apply_metric_scale<T: MetricScalable>(geometry: &T, cal: &ScaleCalibration) -> T {
    geometry.scaled_to_cm(cal.scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruction::CloudPoint;

    #[test]
    fn ten_over_two_is_five() {
        let cal = ScaleCalibration::from_points(Vector3::zeros(), Vector3::new(2.0, 0.0, 0.0), 10.0).unwrap();
        assert_eq!(cal.scale, 5.0);
        let cloud = SparseCloud {
            points: vec![CloudPoint {
                position: Vector3::new(1.0, 1.0, 1.0),
                observations: vec![],
            }],
            units: Units::Arbitrary,
        };
        let scaled = apply_metric_scale(&cloud, &cal);
        assert_eq!(scaled.points[0].position, Vector3::new(5.0, 5.0, 5.0));
        assert_eq!(scaled.units, Units::Cm);
    }

    #[test]
    fn coincident_points_are_zero_baseline() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert!(matches!(
            ScaleCalibration::from_points(p, p, 10.0),
            Err(ReconError::ZeroBaseline(_))
        ));
    }
}
