//! Text exports: sparse clouds as ASCII PLY and camera sets as a line-based
//! listing of K, R (row-major) and t per view.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub use crate::camera::CameraView;
use crate::camera::{Camera, CameraIntrinsics, CameraPose};

use super::SparseCloud;

pub fn sparse_cloud_to_ply(cloud: &SparseCloud) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "comment units {}", cloud.units.as_str());
    let _ = writeln!(out, "element vertex {}", cloud.points.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    out.push_str("property uint observations\nend_header\n");
    for p in &cloud.points {
        let x = p.position;
        let _ = writeln!(out, "{} {} {} {}", x.x, x.y, x.z, p.observations.len());
    }
    out
}

#[derive(Debug, Error, PartialEq)]
#[error("camera set line {line}: {message}")]
pub struct CameraSetError {
    pub line: usize,
    pub message: String,
}

pub fn write_camera_set(views: &[CameraView]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "cameras {}", views.len());
    for (i, v) in views.iter().enumerate() {
        let k = v.camera.intrinsics.matrix();
        let r = v.camera.pose.rotation;
        let t = v.camera.pose.translation;
        let _ = writeln!(out, "view {i} {} {}", v.width, v.height);
        let row = |m: &Matrix3<f64>| {
            (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)].to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(out, "K {}", row(&k));
        let _ = writeln!(out, "R {}", row(&r));
        let _ = writeln!(out, "t {} {} {}", t.x, t.y, t.z);
    }
    out
}

fn numbers(line: usize, fields: &[&str], count: usize) -> Result<Vec<f64>, CameraSetError> {
    if fields.len() != count {
        return Err(CameraSetError {
            line,
            message: format!("expected {count} numbers, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CameraSetError {
                    line,
                    message: format!("invalid number {f:?}"),
                })
        })
        .collect()
}

/// Parses the format produced by [`write_camera_set`]. Blank lines and lines
/// starting with `#` are ignored.
pub fn parse_camera_set(text: &str) -> Result<Vec<CameraView>, CameraSetError> {
    let eof = text.lines().count();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let err = |line, message: &str| CameraSetError {
        line,
        message: message.to_string(),
    };

    let (ln, header) = lines.next().ok_or_else(|| err(0, "empty camera set"))?;
    let count = match header.split_whitespace().collect::<Vec<_>>()[..] {
        ["cameras", n] => n.parse::<usize>().map_err(|_| err(ln, "invalid camera count"))?,
        _ => return Err(err(ln, "expected `cameras <count>`")),
    };
    let mut views = Vec::with_capacity(count.min(1024));
    for expected in 0..count {
        let mut next = |tag: &str| -> Result<(usize, Vec<&str>), CameraSetError> {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| err(eof, &format!("unexpected end of input, expected `{tag}`")))?;
            let mut it = l.split_whitespace();
            if it.next() != Some(tag) {
                return Err(err(ln, &format!("expected `{tag}`")));
            }
            Ok((ln, it.collect()))
        };
        let (ln, v) = next("view")?;
        let [idx, w, h] = v[..] else {
            return Err(err(ln, "expected `view <index> <width> <height>`"));
        };
        if idx.parse::<usize>() != Ok(expected) {
            return Err(err(ln, &format!("expected view index {expected}")));
        }
        let width = w.parse::<u32>().map_err(|_| err(ln, "invalid width"))?;
        let height = h.parse::<u32>().map_err(|_| err(ln, "invalid height"))?;
        let (ln_k, k) = next("K")?;
        let k = numbers(ln_k, &k, 9)?;
        let (ln_r, r) = next("R")?;
        let r = numbers(ln_r, &r, 9)?;
        let (ln_t, t) = next("t")?;
        let t = numbers(ln_t, &t, 3)?;

        let km = Matrix3::from_row_slice(&k);
        if km[(1, 0)] != 0.0 || km[(2, 0)] != 0.0 || km[(2, 1)] != 0.0 || km[(2, 2)] == 0.0 {
            return Err(err(ln_k, "K must be upper triangular with non-zero K[2][2]"));
        }
        let intrinsics = CameraIntrinsics::from_matrix(&km);
        intrinsics.validate().map_err(|e| err(ln_k, &e.to_string()))?;
        let pose = CameraPose::new(Matrix3::from_row_slice(&r), Vector3::new(t[0], t[1], t[2]));
        if pose.rotation_defect() > 1e-6 {
            return Err(err(ln_r, "R is not a rotation matrix"));
        }
        views.push(CameraView {
            width,
            height,
            camera: Camera::new(intrinsics, pose),
        });
    }
    if let Some((ln, _)) = lines.next() {
        return Err(err(ln, "trailing content after last view"));
    }
    Ok(views)
}
