//! Scale-space extremum detection, subpixel refinement and orientation
//! assignment.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::scale_space::{Plane, ScaleSpace};
use super::SiftParams;

/// Pixels skipped at every octave border during extremum search.
const BORDER: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Subpixel position in input-image pixels.
    pub x: f64,
    pub y: f64,
    /// Detection scale in input-image pixels.
    pub sigma: f64,
    /// Orientation in `[0, 2pi)`, measured from +x towards +y (image rows).
    pub theta: f64,
    pub octave: usize,
    /// Integer DoG level the extremum was found in.
    pub level: usize,
    /// Refined fractional level.
    pub level_offset: f64,
    /// Absolute interpolated DoG response.
    pub response: f64,
}

impl Keypoint {
    /// Position in the octave's pixel grid.
    pub(crate) fn octave_xy(&self, space: &ScaleSpace) -> (f64, f64) {
        let scale = (1u64 << self.octave) as f64 * space.input_scale;
        (self.x / scale, self.y / scale)
    }

    /// Scale in the octave's pixel grid.
    pub(crate) fn octave_sigma(&self, space: &ScaleSpace) -> f64 {
        space.level_sigma(self.level as f64 + self.level_offset)
    }
}

/// Gradient of a Gaussian level by central differences.
#[inline]
pub(crate) fn gradient(plane: &Plane, x: usize, y: usize) -> (f64, f64) {
    let dx = plane.at(x + 1, y) as f64 - plane.at(x - 1, y) as f64;
    let dy = plane.at(x, y + 1) as f64 - plane.at(x, y - 1) as f64;
    (dx, dy)
}

pub fn detect_keypoints(space: &ScaleSpace, params: &SiftParams) -> Vec<Keypoint> {
    let s = space.scales_per_octave;
    let prelim = (0.5 * params.contrast_threshold / s as f64) as f32;
    let mut keypoints = Vec::new();

    for (o, dogs) in space.dog.iter().enumerate() {
        let (w, h) = (dogs[0].width, dogs[0].height);
        if w <= 2 * BORDER || h <= 2 * BORDER {
            continue;
        }
        for l in 1..=s {
            for y in BORDER..h - BORDER {
                for x in BORDER..w - BORDER {
                    let v = dogs[l].at(x, y);
                    if v.abs() <= prelim || !is_extremum(dogs, l, x, y) {
                        continue;
                    }
                    if let Some(kp) = refine(space, o, l, x, y, params) {
                        assign_orientations(space, kp, params, &mut keypoints);
                    }
                }
            }
        }
    }

    keypoints.sort_by(|a, b| {
        (a.octave, a.level)
            .cmp(&(b.octave, b.level))
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
            .then(a.theta.total_cmp(&b.theta))
    });
    keypoints.dedup_by(|a, b| {
        a.octave == b.octave
            && a.level == b.level
            && (a.x - b.x).abs() < 1e-9
            && (a.y - b.y).abs() < 1e-9
            && (a.theta - b.theta).abs() < 1e-9
    });

    if let Some(max) = params.max_keypoints {
        if keypoints.len() > max {
            let mut order: Vec<usize> = (0..keypoints.len()).collect();
            order.sort_by(|&a, &b| keypoints[b].response.total_cmp(&keypoints[a].response).then(a.cmp(&b)));
            let mut keep = vec![false; keypoints.len()];
            order[..max].iter().for_each(|&i| keep[i] = true);
            let mut i = 0;
            keypoints.retain(|_| {
                i += 1;
                keep[i - 1]
            });
        }
    }
    keypoints
}

fn is_extremum(dogs: &[Plane], l: usize, x: usize, y: usize) -> bool {
    let v = dogs[l].at(x, y);
    let mut is_max = v > 0.0;
    let mut is_min = v < 0.0;
    for plane in &dogs[l - 1..=l + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                let n = plane.at(xx, yy);
                is_max &= v >= n;
                is_min &= v <= n;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    is_max || is_min
}

/// Quadratic refinement of an extremum in (x, y, level); returns `None` when
/// the fit does not settle or the contrast / edge tests reject it.
fn refine(
    space: &ScaleSpace,
    octave: usize,
    mut l: usize,
    mut x: usize,
    mut y: usize,
    params: &SiftParams,
) -> Option<Keypoint> {
    let dogs = &space.dog[octave];
    let s = space.scales_per_octave;
    let (w, h) = (dogs[0].width, dogs[0].height);
    let mut converged = None;

    for _ in 0..params.max_refine_steps {
        let d = |dl: isize, dx: isize, dy: isize| -> f64 {
            dogs[(l as isize + dl) as usize].at((x as isize + dx) as usize, (y as isize + dy) as usize) as f64
        };
        let v = d(0, 0, 0);
        let g = Vector3::new(
            (d(0, 1, 0) - d(0, -1, 0)) * 0.5,
            (d(0, 0, 1) - d(0, 0, -1)) * 0.5,
            (d(1, 0, 0) - d(-1, 0, 0)) * 0.5,
        );
        let dxx = d(0, 1, 0) + d(0, -1, 0) - 2.0 * v;
        let dyy = d(0, 0, 1) + d(0, 0, -1) - 2.0 * v;
        let dss = d(1, 0, 0) + d(-1, 0, 0) - 2.0 * v;
        let dxy = (d(0, 1, 1) - d(0, -1, 1) - d(0, 1, -1) + d(0, -1, -1)) * 0.25;
        let dxs = (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0)) * 0.25;
        let dys = (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1)) * 0.25;
        let hess = Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
        let offset = -hess.lu().solve(&g)?;
        if !offset.iter().all(|v| v.is_finite()) {
            return None;
        }
        if offset.iter().all(|c| c.abs() < 0.5) {
            converged = Some((offset, v + 0.5 * g.dot(&offset), dxx, dyy, dxy));
            break;
        }
        let nx = x as isize + offset[0].round() as isize;
        let ny = y as isize + offset[1].round() as isize;
        let nl = l as isize + offset[2].round() as isize;
        if nl < 1
            || nl > s as isize
            || nx < BORDER as isize
            || ny < BORDER as isize
            || nx >= (w - BORDER) as isize
            || ny >= (h - BORDER) as isize
        {
            return None;
        }
        x = nx as usize;
        y = ny as usize;
        l = nl as usize;
    }

    let (offset, contrast, dxx, dyy, dxy) = converged?;
    if contrast.abs() < params.contrast_threshold {
        return None;
    }
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let r = params.edge_ratio;
    if det <= 0.0 || tr * tr * r >= (r + 1.0).powi(2) * det {
        return None;
    }

    let scale = (1u64 << octave) as f64 * space.input_scale;
    Some(Keypoint {
        x: (x as f64 + offset[0]) * scale,
        y: (y as f64 + offset[1]) * scale,
        sigma: space.absolute_sigma(octave, l as f64 + offset[2]),
        theta: 0.0,
        octave,
        level: l,
        level_offset: offset[2],
        response: contrast.abs(),
    })
}

/// Pushes one keypoint per dominant orientation of the local gradient
/// histogram (peaks within `peak_ratio` of the maximum).
fn assign_orientations(space: &ScaleSpace, kp: Keypoint, params: &SiftParams, out: &mut Vec<Keypoint>) {
    let bins = params.orientation_bins;
    let hist = orientation_histogram(space, &kp, bins);
    let max = hist.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return;
    }
    for i in 0..bins {
        let prev = hist[(i + bins - 1) % bins];
        let next = hist[(i + 1) % bins];
        let v = hist[i];
        if v > prev && v > next && v >= params.peak_ratio * max {
            let shift = 0.5 * (prev - next) / (prev - 2.0 * v + next);
            let bin = (i as f64 + shift).rem_euclid(bins as f64);
            let mut theta = bin * TAU / bins as f64;
            if theta >= TAU {
                theta -= TAU;
            }
            out.push(Keypoint { theta, ..kp.clone() });
        }
    }
}

/// Magnitude-weighted, Gaussian-windowed histogram of gradient angles,
/// smoothed with a `[1 4 6 4 1] / 16` circular kernel.
pub(crate) fn orientation_histogram(space: &ScaleSpace, kp: &Keypoint, bins: usize) -> Vec<f64> {
    let plane = &space.octaves[kp.octave][kp.level];
    let (ox, oy) = kp.octave_xy(space);
    let sigma_w = 1.5 * kp.octave_sigma(space);
    let radius = (3.0 * sigma_w).round() as isize;
    let (cx, cy) = (ox.round() as isize, oy.round() as isize);
    let mut raw = vec![0.0f64; bins];
    for j in -radius..=radius {
        let y = cy + j;
        if y < 1 || y >= plane.height as isize - 1 {
            continue;
        }
        for i in -radius..=radius {
            let x = cx + i;
            if x < 1 || x >= plane.width as isize - 1 {
                continue;
            }
            let (dx, dy) = gradient(plane, x as usize, y as usize);
            let m = (dx * dx + dy * dy).sqrt();
            if m == 0.0 {
                continue;
            }
            let theta = dy.atan2(dx).rem_euclid(TAU);
            let weight = (-((i * i + j * j) as f64) / (2.0 * sigma_w * sigma_w)).exp();
            let bin = ((theta * bins as f64 / TAU).round() as usize) % bins;
            raw[bin] += weight * m;
        }
    }
    (0..bins)
        .map(|i| {
            let at = |d: isize| raw[(i as isize + d).rem_euclid(bins as isize) as usize];
            (at(-2) + at(2) + 4.0 * (at(-1) + at(1)) + 6.0 * at(0)) / 16.0
        })
        .collect()
}
