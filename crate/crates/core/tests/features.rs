use std::f64::consts::{PI, TAU};

use burnscope::camera::{Camera, CameraIntrinsics, CameraPose};
use burnscope::features::{extract_features, ImageFeatures, SiftParams};
use burnscope::image::ImageBuffer;
use burnscope::synthetic::BlobTexture;
use nalgebra::{Matrix3, Vector3};

fn textured_image(size: usize, seed: u64) -> ImageBuffer {
    let tex = BlobTexture::generate(size, size * 3, (2.5, 7.0), seed);
    ImageBuffer::from_fn(size, size, |x, y| (tex.data[y * size + x] as f64 * 255.0).round() as u8).unwrap()
}

/// Quarter turn: output pixel (u, v) reads input (v, h - 1 - u).
fn rotate_quarter(img: &ImageBuffer) -> ImageBuffer {
    let (w, h) = (img.width(), img.height());
    let px = img.pixels();
    ImageBuffer::from_fn(h, w, |u, v| px[(h - 1 - u) * w + v]).unwrap()
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Plane z = 0 to pixel homography of a camera.
fn plane_homography(cam: &Camera) -> Matrix3<f64> {
    let r = cam.pose.rotation;
    let mut m = Matrix3::zeros();
    m.set_column(0, &r.column(0));
    m.set_column(1, &r.column(1));
    m.set_column(2, &cam.pose.translation);
    cam.intrinsics.matrix() * m
}

fn apply(h: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let p = h * Vector3::new(x, y, 1.0);
    (p.x / p.z, p.y / p.z)
}

fn render_plane(tex: &BlobTexture, cam: &Camera, w: usize, h: usize, half: f64) -> ImageBuffer {
    let inv = plane_homography(cam).try_inverse().unwrap();
    ImageBuffer::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        for sy in 0..3 {
            for sx in 0..3 {
                let (px, py) = (x as f64 + (sx as f64 - 1.0) / 3.0, y as f64 + (sy as f64 - 1.0) / 3.0);
                let (u, v) = apply(&inv, px, py);
                acc += tex.sample((u + half) / (2.0 * half), (v + half) / (2.0 * half));
            }
        }
        (acc / 9.0 * 255.0).round() as u8
    })
    .unwrap()
}

fn repeatability(a: &ImageFeatures, b: &ImageFeatures, map: impl Fn(f64, f64) -> (f64, f64), w: f64, h: f64) -> f64 {
    let margin = 10.0;
    let (mut seen, mut hit) = (0usize, 0usize);
    for k in &a.keypoints {
        let (x, y) = map(k.x, k.y);
        if x < margin || y < margin || x > w - margin || y > h - margin {
            continue;
        }
        seen += 1;
        if b.keypoints.iter().any(|q| (q.x - x).hypot(q.y - y) <= 2.0) {
            hit += 1;
        }
    }
    assert!(seen > 50, "only {seen} keypoints in the shared region");
    hit as f64 / seen as f64
}

#[test]
fn quarter_turn_shifts_orientation_and_keeps_descriptors() {
    // 257 = 2^8 + 1 keeps the subsampling grid aligned under the turn.
    let img = textured_image(257, 3);
    let rot = rotate_quarter(&img);
    let params = SiftParams::default();
    let a = extract_features(&img, &params).unwrap();
    let b = extract_features(&rot, &params).unwrap();
    assert!(a.len() > 50);

    let bin = TAU / params.orientation_bins as f64;
    let (mut paired, mut good_angle, mut good_desc) = (0, 0, 0);
    for (i, k) in a.keypoints.iter().enumerate() {
        let (u, v) = (256.0 - k.y, k.x);
        let expected = (k.theta + PI / 2.0).rem_euclid(TAU);
        let best = b
            .keypoints
            .iter()
            .enumerate()
            .filter(|(_, q)| (q.x - u).hypot(q.y - v) < 0.5 && (q.sigma / k.sigma - 1.0).abs() < 0.05)
            .min_by(|x, y| angle_gap(x.1.theta, expected).total_cmp(&angle_gap(y.1.theta, expected)));
        let Some((j, q)) = best else { continue };
        paired += 1;
        if angle_gap(q.theta, expected) <= bin {
            good_angle += 1;
            if a.descriptors[i].cosine(&b.descriptors[j]) >= 0.8 {
                good_desc += 1;
            }
        }
    }
    assert!(paired as f64 >= 0.8 * a.len() as f64, "paired {paired} of {}", a.len());
    assert!(
        good_angle as f64 >= 0.95 * paired as f64,
        "{good_angle} of {paired} orientations"
    );
    assert!(
        good_desc as f64 >= 0.95 * good_angle as f64,
        "{good_desc} of {good_angle} descriptors"
    );
}

#[test]
fn keypoints_repeat_across_a_plane_homography() {
    let half = 6.0;
    let tex = BlobTexture::generate(1024, 3000, (4.0, 12.0), 21);
    let k = CameraIntrinsics::new(700.0, 700.0, 320.0, 240.0).unwrap();
    let cam_a = Camera::new(
        k,
        CameraPose::look_at(Vector3::new(0.0, 0.0, -14.0), Vector3::zeros(), -Vector3::y()),
    );
    let cam_b = Camera::new(
        k,
        CameraPose::look_at(Vector3::new(4.0, 1.0, -13.0), Vector3::zeros(), -Vector3::y()),
    );
    let (w, h) = (640, 480);
    let img_a = render_plane(&tex, &cam_a, w, h, half);
    let img_b = render_plane(&tex, &cam_b, w, h, half);
    let params = SiftParams::default();
    let fa = extract_features(&img_a, &params).unwrap();
    let fb = extract_features(&img_b, &params).unwrap();
    let a_to_b = plane_homography(&cam_b) * plane_homography(&cam_a).try_inverse().unwrap();
    let r = repeatability(&fa, &fb, |x, y| apply(&a_to_b, x, y), w as f64, h as f64);
    assert!(r >= 0.7, "repeatability {r}");
}

#[test]
fn extraction_is_deterministic() {
    let img = textured_image(160, 9);
    let params = SiftParams::default();
    let a = extract_features(&img, &params).unwrap();
    let b = extract_features(&img, &params).unwrap();
    assert_eq!(a, b);
    assert!(!a.is_empty());
}

#[test]
fn descriptors_are_unit_length() {
    let img = textured_image(160, 10);
    let f = extract_features(&img, &SiftParams::default()).unwrap();
    for d in &f.descriptors {
        assert!((d.norm() - 1.0).abs() < 1e-5);
    }
}
