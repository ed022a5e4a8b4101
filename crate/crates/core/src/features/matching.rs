//! Exhaustive nearest-neighbour matching with the distance-ratio test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::descriptor::Descriptor;
use super::FeatureError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    /// Distance to the nearest descriptor in `b`.
    pub d1: f64,
    /// Distance to the second-nearest descriptor in `b`.
    pub d2: f64,
    pub passed_ratio: bool,
}

/// `d1 / d2 < t`, with `d2 == 0` never passing unless `d1` is also zero
/// and strictly closer (it cannot be).
#[inline]
pub fn ratio_test(d1: f64, d2: f64, t: f64) -> bool {
    if d2 > 0.0 {
        d1 / d2 < t
    } else {
        false
    }
}

/// One [`Match`] per descriptor of `a`; ties in distance resolve to the
/// lowest index in `b`.
pub fn match_descriptors(a: &[Descriptor], b: &[Descriptor], t: f64) -> Result<Vec<Match>, FeatureError> {
    if !(t > 0.0 && t < 1.0) {
        return Err(FeatureError::InvalidRatio(t));
    }
    if b.len() < 2 {
        return Err(FeatureError::InsufficientCandidates(b.len()));
    }
    Ok(a.par_iter()
        .enumerate()
        .map(|(ia, da)| {
            let mut best = (usize::MAX, f64::INFINITY);
            let mut second = f64::INFINITY;
            for (ib, db) in b.iter().enumerate() {
                let d = squared_distance(da, db);
                if d < best.1 {
                    second = best.1;
                    best = (ib, d);
                } else if d < second {
                    second = d;
                }
            }
            let (d1, d2) = (best.1.sqrt(), second.sqrt());
            Match {
                index_a: ia,
                index_b: best.0,
                d1,
                d2,
                passed_ratio: ratio_test(d1, d2, t),
            }
        })
        .collect())
}

#[inline]
fn squared_distance(a: &Descriptor, b: &Descriptor) -> f64 {
    let mut acc = 0.0f32;
    for (x, y) in a.0.iter().zip(&b.0) {
        let d = x - y;
        acc += d * d;
    }
    acc as f64
}

/// Ratio-test survivors that are also mutual nearest neighbours.
pub fn mutual_matches(a: &[Descriptor], b: &[Descriptor], t: f64) -> Result<Vec<Match>, FeatureError> {
    let ab = match_descriptors(a, b, t)?;
    let ba = match_descriptors(b, a, t)?;
    Ok(ab
        .into_iter()
        .filter(|m| m.passed_ratio && ba[m.index_b].index_b == m.index_a)
        .collect())
}
