//! 128-dimensional gradient-histogram descriptors.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::keypoints::{gradient, Keypoint};
use super::scale_space::ScaleSpace;

const SPATIAL_CELLS: usize = 4;
const ORIENTATION_BINS: usize = 8;
pub const DESCRIPTOR_LEN: usize = SPATIAL_CELLS * SPATIAL_CELLS * ORIENTATION_BINS;
/// Cell width in units of the keypoint scale.
const CELL_SCALE: f64 = 3.0;
const CLAMP: f64 = 0.2;

/// Unit-length 4x4x8 histogram of rotated gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor(pub Vec<f32>);

impl Descriptor {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn cosine(&self, other: &Descriptor) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(&a, &b)| a as f64 * b as f64).sum();
        dot / (self.norm() * other.norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipReason {
    /// Support window leaves the octave image.
    OutOfBounds,
    /// No gradient energy under the window.
    Flat,
}

/// Descriptors for the keypoints that could be described, aligned with
/// `keypoint_indices`; the rest are listed in `skipped`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DescriptorSet {
    pub keypoint_indices: Vec<usize>,
    pub descriptors: Vec<Descriptor>,
    pub skipped: Vec<(usize, SkipReason)>,
}

pub fn compute_descriptors(space: &ScaleSpace, keypoints: &[Keypoint]) -> DescriptorSet {
    let mut set = DescriptorSet::default();
    for (i, kp) in keypoints.iter().enumerate() {
        match describe(space, kp) {
            Ok(d) => {
                set.keypoint_indices.push(i);
                set.descriptors.push(d);
            }
            Err(reason) => set.skipped.push((i, reason)),
        }
    }
    set
}

fn describe(space: &ScaleSpace, kp: &Keypoint) -> Result<Descriptor, SkipReason> {
    let plane = &space.octaves[kp.octave][kp.level];
    let (ox, oy) = kp.octave_xy(space);
    let cell = CELL_SCALE * kp.octave_sigma(space);
    let d = SPATIAL_CELLS as f64;
    let radius = (cell * std::f64::consts::SQRT_2 * (d + 1.0) * 0.5).round() as isize;
    let (cx, cy) = (ox.round() as isize, oy.round() as isize);
    if cx - radius < 1
        || cy - radius < 1
        || cx + radius >= plane.width as isize - 1
        || cy + radius >= plane.height as isize - 1
    {
        return Err(SkipReason::OutOfBounds);
    }

    let (sin_t, cos_t) = kp.theta.sin_cos();
    let window_sigma = 0.5 * d;
    let n = ORIENTATION_BINS;
    let mut hist = vec![0.0f64; (SPATIAL_CELLS + 2) * (SPATIAL_CELLS + 2) * (n + 2)];
    let idx = |r: usize, c: usize, o: usize| (r * (SPATIAL_CELLS + 2) + c) * (n + 2) + o;

    for j in -radius..=radius {
        for i in -radius..=radius {
            // offset rotated into the keypoint frame, in cell units
            let u = (i as f64 * cos_t + j as f64 * sin_t) / cell;
            let v = (-(i as f64) * sin_t + j as f64 * cos_t) / cell;
            let rbin = v + d / 2.0 - 0.5;
            let cbin = u + d / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d || cbin <= -1.0 || cbin >= d {
                continue;
            }
            let (gx, gy) = gradient(plane, (cx + i) as usize, (cy + j) as usize);
            let m = (gx * gx + gy * gy).sqrt();
            if m == 0.0 {
                continue;
            }
            let angle = (gy.atan2(gx) - kp.theta).rem_euclid(TAU);
            let obin = angle * n as f64 / TAU;
            let weight = (-(u * u + v * v) / (2.0 * window_sigma * window_sigma)).exp() * m;

            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (dr, dc, dob) = (rbin - r0, cbin - c0, obin - o0);
            // shift by one so that the -1 bin lands in the padding row
            let (r0, c0, o0) = ((r0 + 1.0) as usize, (c0 + 1.0) as usize, o0 as usize);
            for (ri, wr) in [(0, 1.0 - dr), (1, dr)] {
                for (ci, wc) in [(0, 1.0 - dc), (1, dc)] {
                    for (oi, wo) in [(0, 1.0 - dob), (1, dob)] {
                        hist[idx(r0 + ri, c0 + ci, o0 + oi)] += weight * wr * wc * wo;
                    }
                }
            }
        }
    }

    let mut raw = Vec::with_capacity(DESCRIPTOR_LEN);
    for r in 1..=SPATIAL_CELLS {
        for c in 1..=SPATIAL_CELLS {
            for o in 0..n {
                // orientation bins n and n+1 wrap around to 0 and 1
                let mut v = hist[idx(r, c, o)];
                if o < 2 {
                    v += hist[idx(r, c, o + n)];
                }
                raw.push(v);
            }
        }
    }

    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= f64::MIN_POSITIVE {
        return Err(SkipReason::Flat);
    }
    raw.iter_mut().for_each(|v| *v = (*v / norm).min(CLAMP));
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(Descriptor(raw.iter().map(|v| (v / norm) as f32).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_scale_space, detect_keypoints, SiftParams};
    use crate::image::ImageBuffer;

    fn texture(size: usize, gain: f64) -> ImageBuffer {
        ImageBuffer::from_fn(size, size, |x, y| {
            let (x, y) = (x as f64, y as f64);
            let v = 100.0
                + 25.0 * (x * 0.21 + 0.3 * y).sin()
                + 20.0 * (y * 0.17 - 0.11 * x).cos()
                + 15.0 * ((x - 40.0).hypot(y - 50.0) * 0.3).sin();
            // even base values keep a 1.5x gain exact in 8 bits
            let even = 2.0 * (v / 2.0).round();
            (even * gain).round().clamp(0.0, 255.0) as u8
        })
        .unwrap()
    }

    #[test]
    fn descriptors_are_unit_length_and_clamped() {
        let img = crate::features::speckle_texture(160, 128, 3);
        let params = SiftParams::default();
        let space = build_scale_space(&img, &params).unwrap();
        let kps = detect_keypoints(&space, &params);
        let set = compute_descriptors(&space, &kps);
        assert!(!set.descriptors.is_empty());
        assert_eq!(set.descriptors.len() + set.skipped.len(), kps.len());
        for d in &set.descriptors {
            assert_eq!(d.0.len(), DESCRIPTOR_LEN);
            assert!((d.norm() - 1.0).abs() < 1e-6);
            assert!(d.0.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn keypoint_near_border_is_skipped() {
        let img = texture(96, 1.0);
        let params = SiftParams::default();
        let space = build_scale_space(&img, &params).unwrap();
        let kp = Keypoint {
            x: 2.0,
            y: 48.0,
            sigma: 1.6,
            theta: 0.0,
            octave: 0,
            level: 1,
            level_offset: 0.0,
            response: 0.1,
        };
        let set = compute_descriptors(&space, &[kp]);
        assert_eq!(set.skipped, vec![(0, SkipReason::OutOfBounds)]);
    }

    #[test]
    fn brightness_gain_cancels() {
        let params = SiftParams::default();
        let a = texture(96, 1.0);
        let b = texture(96, 1.5);
        let sa = build_scale_space(&a, &params).unwrap();
        let sb = build_scale_space(&b, &params).unwrap();
        let kp = Keypoint {
            x: 48.0,
            y: 47.0,
            sigma: 2.0,
            theta: 0.7,
            octave: 0,
            level: 1,
            level_offset: 0.0,
            response: 0.1,
        };
        let da = describe(&sa, &kp).unwrap();
        let db = describe(&sb, &kp).unwrap();
        for (x, y) in da.0.iter().zip(&db.0) {
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
    }
}
