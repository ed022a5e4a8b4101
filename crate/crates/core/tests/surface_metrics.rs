use std::collections::HashMap;

use burnscope::mapping::LabeledMesh;
use burnscope::mesh::TriMesh;
use burnscope::metrics::{burn_perimeter, burn_surface_area, compute_burn_metrics, BurnMetrics, MetricsOptions};
use burnscope::reconstruction::{apply_metric_scale, ScaleCalibration};
use burnscope::synthetic::{grid_surface, icosphere, Crater};
use burnscope::units::Units;
use chrono::{TimeZone, Utc};
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

fn epoch() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

fn metrics(mesh: &LabeledMesh) -> BurnMetrics {
    compute_burn_metrics(mesh, &MetricsOptions::default(), None, epoch())
        .unwrap()
        .metrics
}

fn relabel(mesh: TriMesh, like: &LabeledMesh) -> LabeledMesh {
    LabeledMesh::from_probabilities(mesh, like.face_probability.clone(), 0.5).unwrap()
}

/// Counts edges per face incidence from scratch and sums lengths of edges
/// with exactly one burned face.
fn recount_perimeter(mesh: &LabeledMesh) -> f64 {
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for (f, face) in mesh.mesh.faces.iter().enumerate() {
        if !mesh.burned[f] {
            continue;
        }
        for k in 0..3 {
            let (a, b) = (face[k], face[(k + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    count
        .iter()
        .filter(|(_, &n)| n == 1)
        .map(|(&(a, b), _)| (mesh.mesh.vertices[a] - mesh.mesh.vertices[b]).norm())
        .sum()
}

#[test]
fn icosphere_area_close_to_sphere() {
    let r = 5.0;
    let sphere = icosphere(3, r, Units::Cm);
    let labeled = LabeledMesh::uniform(sphere, true);
    let exact = 4.0 * std::f64::consts::PI * r * r;
    let area = burn_surface_area(&labeled);
    assert!(((area - exact) / exact).abs() < 0.02, "area {area} vs {exact}");
    assert!(area < exact);
}

#[test]
fn closed_burned_sphere_has_no_boundary() {
    let labeled = LabeledMesh::uniform(icosphere(2, 3.0, Units::Cm), true);
    assert_eq!(burn_perimeter(&labeled).unwrap(), 0.0);
}

#[test]
fn unit_square_patch_perimeter_is_four() {
    let v = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(1.0, 1.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
    ];
    let square = TriMesh::new(v, vec![[0, 1, 2], [0, 2, 3]], Units::Cm).unwrap();
    let labeled = LabeledMesh::uniform(square, true);
    assert_eq!(burn_perimeter(&labeled).unwrap(), 4.0);
    assert_eq!(burn_surface_area(&labeled), 1.0);
}

#[test]
fn unit_cell_inside_grid_has_perimeter_four() {
    let grid = grid_surface(6, 3.0, Units::Cm, |_, _| 0.0);
    let probs: Vec<f64> = (0..grid.faces.len())
        .map(|f| {
            let c = grid.centroid(f);
            if (0.0..1.0).contains(&c.x) && (0.0..1.0).contains(&c.y) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let labeled = LabeledMesh::from_probabilities(grid, probs, 0.5).unwrap();
    assert_eq!(labeled.burned_faces().count(), 2);
    assert_eq!(burn_perimeter(&labeled).unwrap(), 4.0);
    assert_eq!(burn_surface_area(&labeled), 1.0);
}

#[test]
fn crater_depth_and_volume_against_voxel_integration() {
    let crater = Crater {
        radius: 3.0,
        depth: 0.5,
    };
    let labeled = crater.mesh(180, 4.5);
    let m = metrics(&labeled);
    assert!((m.d_max_mm - 5.0).abs() < 0.1, "d_max {}", m.d_max_mm);

    // 0.1 mm voxels: count voxel centres lying between the pit floor and
    // the healthy plane.
    let h = 0.01;
    let n = (crater.radius / h).ceil() as i64;
    let mut voxels = 0u64;
    for i in -n..n {
        for j in -n..n {
            let (x, y) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            let d = crater.depth_at(x, y);
            let mut k = 0;
            while (k as f64 + 0.5) * h < d {
                voxels += 1;
                k += 1;
            }
        }
    }
    let oracle = voxels as f64 * h * h * h;
    let rel = (m.volume_proxy_cm3 - oracle).abs() / oracle;
    assert!(rel < 0.05, "volume {} vs voxel {} ({rel})", m.volume_proxy_cm3, oracle);
}

#[test]
fn perimeter_matches_independent_recount_on_crater() {
    let labeled = Crater {
        radius: 1.7,
        depth: 0.2,
    }
    .mesh(40, 3.0);
    let ours = burn_perimeter(&labeled).unwrap();
    let theirs = recount_perimeter(&labeled);
    assert!((ours - theirs).abs() <= 1e-12 * theirs.max(1.0));
}

#[test]
fn depth_average_lies_between_vertex_extremes() {
    let labeled = Crater {
        radius: 2.0,
        depth: 0.4,
    }
    .mesh(60, 3.5);
    let rep = compute_burn_metrics(&labeled, &MetricsOptions::default(), None, epoch()).unwrap();
    let depths = rep.depths.unwrap();
    let vals: Vec<f64> = depths
        .burn_vertices
        .iter()
        .map(|&v| depths.per_vertex_cm[v] * 10.0)
        .collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(lo <= rep.metrics.d_avg_mm && rep.metrics.d_avg_mm <= hi);
    assert_eq!(hi, rep.metrics.d_max_mm);
}

#[test]
fn scaling_laws_hold_to_machine_precision() {
    let metric = Crater {
        radius: 2.0,
        depth: 0.3,
    }
    .mesh(50, 3.5);
    for s_true in [0.37, 1.0, 2.5, 13.0] {
        // Model-space mesh is the metric one shrunk by s_true.
        let model_tri = metric.mesh.transformed(|v| v / s_true);
        let mut model_tri_arbitrary = model_tri.clone();
        model_tri_arbitrary.units = Units::Arbitrary;
        let (p1, p2) = (model_tri.vertices[0], model_tri.vertices[7]);
        let known = (metric.mesh.vertices[0] - metric.mesh.vertices[7]).norm();
        let cal = ScaleCalibration::from_points(p1, p2, known).unwrap();
        assert_eq!(cal.scale, known / (p2 - p1).norm());

        let scaled = relabel(apply_metric_scale(&model_tri_arbitrary, &cal), &metric);
        assert_eq!(scaled.mesh.units, Units::Cm);
        let model = relabel(model_tri, &metric);
        let (ms, mm) = (metrics(&scaled), metrics(&model));
        let s = cal.scale;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1e-300);
        assert!(
            close(ms.perimeter_cm, s * mm.perimeter_cm),
            "{} {}",
            ms.perimeter_cm,
            s * mm.perimeter_cm
        );
        assert!(close(ms.d_max_mm, s * mm.d_max_mm));
        assert!(close(ms.area_cm2, s * s * mm.area_cm2));
        assert!(close(ms.volume_proxy_cm3, s * s * s * mm.volume_proxy_cm3));
    }
}

#[test]
fn unscaled_mesh_is_refused() {
    let mut labeled = Crater {
        radius: 1.0,
        depth: 0.1,
    }
    .mesh(20, 2.0);
    labeled.mesh.units = Units::Arbitrary;
    assert!(compute_burn_metrics(&labeled, &MetricsOptions::default(), None, epoch()).is_err());
}

#[test]
fn tbsa_is_area_over_body_surface() {
    let labeled = Crater {
        radius: 1.0,
        depth: 0.1,
    }
    .mesh(30, 2.0);
    let rep = compute_burn_metrics(&labeled, &MetricsOptions::default(), Some(18_000.0), epoch()).unwrap();
    let t = rep.metrics.tbsa_percent.unwrap();
    assert!((t - 100.0 * rep.metrics.area_cm2 / 18_000.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_are_rigid_invariant(
        ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
        angle in 0.0f64..std::f64::consts::PI,
        tx in -50.0f64..50.0, ty in -50.0f64..50.0, tz in -50.0f64..50.0,
    ) {
        let axis = Vector3::new(ax, ay, az);
        prop_assume!(axis.norm() > 1e-3);
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let t = Vector3::new(tx, ty, tz);
        let base = Crater { radius: 1.5, depth: 0.3 }.mesh(30, 2.5);
        let moved = relabel(base.mesh.transformed(|v| rot * v + t), &base);
        let (a, b) = (metrics(&base), metrics(&moved));
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * y.abs().max(1.0);
        prop_assert!(close(a.area_cm2, b.area_cm2));
        prop_assert!(close(a.perimeter_cm, b.perimeter_cm));
        prop_assert!(close(a.d_max_mm, b.d_max_mm), "{} {}", a.d_max_mm, b.d_max_mm);
        prop_assert!(close(a.d_avg_mm, b.d_avg_mm));
        prop_assert!(close(a.volume_proxy_cm3, b.volume_proxy_cm3));
    }

    #[test]
    fn area_is_additive_and_perimeter_matches_recount(bits in proptest::collection::vec(any::<bool>(), 2 * 8 * 8)) {
        let grid = grid_surface(8, 2.0, Units::Cm, |x, y| 0.1 * (x * y).sin());
        let probs: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let labeled = LabeledMesh::from_probabilities(grid, probs, 0.5).unwrap();
        let direct: f64 = labeled.burned_faces().map(|f| labeled.mesh.face_area(f)).sum();
        prop_assert_eq!(burn_surface_area(&labeled), direct);
        let mine = burn_perimeter(&labeled).unwrap();
        let other = recount_perimeter(&labeled);
        prop_assert!((mine - other).abs() <= 1e-12 * other.max(1.0));
    }
}
