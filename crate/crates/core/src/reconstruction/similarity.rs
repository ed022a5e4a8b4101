//! Least-squares similarity transform between corresponding point sets.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::ReconError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * self.rotation * x + self.translation
    }
}

/// Finds `s, R, t` minimizing `sum |s R a_i + t - b_i|^2`.
pub fn fit_similarity(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<Similarity, ReconError> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(ReconError::InsufficientMatches {
            found: a.len().min(b.len()),
            required: 3,
        });
    }
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vector3<f64>>() / n;
    let cb = b.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_a = 0.0;
    for (p, q) in a.iter().zip(b) {
        let (da, db) = (p - ca, q - cb);
        cov += db * da.transpose();
        var_a += da.norm_squared();
    }
    if var_a <= 0.0 {
        return Err(ReconError::DegenerateGeometry("source points coincide".into()));
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * vt;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
    let scale = trace / var_a;
    Ok(Similarity {
        scale,
        rotation,
        translation: cb - scale * rotation * ca,
    })
}
