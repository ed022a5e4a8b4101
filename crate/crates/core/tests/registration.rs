use burnscope::longitudinal::{
    compute_deltas, icp_align, nearest_brute_force, rigid_fit_svd, IcpParams, PointGrid, RigidTransform, SeriesEntry,
};
use burnscope::metrics::BurnMetrics;
use burnscope::synthetic::bumpy_patch;
use chrono::{TimeZone, Utc};
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn planted(axis: Vector3<f64>, degrees: f64, t: Vector3<f64>) -> RigidTransform {
    RigidTransform {
        rotation: *Rotation3::from_axis_angle(&Unit::new_normalize(axis), degrees.to_radians()).matrix(),
        translation: t,
    }
}

fn fit_cost(r: &Matrix3<f64>, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
    let n = src.len() as f64;
    let sc = src.iter().sum::<Vector3<f64>>() / n;
    let dc = dst.iter().sum::<Vector3<f64>>() / n;
    src.iter()
        .zip(dst)
        .map(|(s, d)| (r * (s - sc) - (d - dc)).norm_squared())
        .sum()
}

/// Best cost over rotations on a one-degree Euler grid. Uses the identity
/// cost(R) = const - 2 tr(R H) so each candidate costs nine products.
fn grid_search_cost(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
    let n = src.len() as f64;
    let sc = src.iter().sum::<Vector3<f64>>() / n;
    let dc = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut base = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - sc, d - dc);
        h += b * a.transpose();
        base += a.norm_squared() + b.norm_squared();
    }
    let rz: Vec<Matrix3<f64>> = (0..360)
        .map(|k| *Rotation3::from_axis_angle(&Vector3::z_axis(), (k as f64).to_radians()).matrix())
        .collect();
    let ry: Vec<Matrix3<f64>> = (-90..=90)
        .map(|k| *Rotation3::from_axis_angle(&Vector3::y_axis(), (k as f64).to_radians()).matrix())
        .collect();
    let rx: Vec<Matrix3<f64>> = (0..360)
        .map(|k| *Rotation3::from_axis_angle(&Vector3::x_axis(), (k as f64).to_radians()).matrix())
        .collect();
    let mut best = f64::NEG_INFINITY;
    for a in &rz {
        for b in &ry {
            let ab = a * b;
            for c in &rx {
                let r = ab * c;
                // Sum of R .* H equals the sum of b^T R a over pairs.
                let tr = r.component_mul(&h).sum();
                if tr > best {
                    best = tr;
                }
            }
        }
    }
    base - 2.0 * best
}

fn metrics(area: f64, d: f64, v: f64) -> BurnMetrics {
    BurnMetrics {
        area_cm2: area,
        perimeter_cm: 0.0,
        d_max_mm: d,
        d_avg_mm: d / 2.0,
        volume_proxy_cm3: v,
        tbsa_percent: None,
        computed_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
    }
}

#[test]
fn grid_fit_never_beats_svd_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = Normal::new(0.0, 0.2).unwrap();
    for n in [3usize, 4, 5, 6] {
        let src: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::from_fn(|_, _| noise.sample(&mut rng) * 10.0))
            .collect();
        let g = planted(
            Vector3::new(0.3, -1.0, 0.5),
            33.0 + n as f64,
            Vector3::new(1.0, 2.0, 3.0),
        );
        let dst: Vec<Vector3<f64>> = src
            .iter()
            .map(|p| g.apply(p) + Vector3::from_fn(|_, _| noise.sample(&mut rng)))
            .collect();
        let fit = rigid_fit_svd(&src, &dst).unwrap();
        let svd_cost = fit_cost(&fit.rotation, &src, &dst);
        let grid_cost = grid_search_cost(&src, &dst);
        assert!(
            svd_cost <= grid_cost + 1e-9 * grid_cost.max(1.0),
            "n={n}: svd {svd_cost} grid {grid_cost}"
        );
    }
}

#[test]
fn noisy_registration_rms_matches_noise_level() {
    let target = bumpy_patch(100, 5);
    let g = planted(Vector3::new(0.2, 0.1, 1.0), 4.0, Vector3::new(0.1, -0.05, 0.02));
    let inv = g.inverse();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let offsets: Vec<Vector3<f64>> = (0..target.len())
        .map(|_| Vector3::from_fn(|_, _| noise.sample(&mut rng)))
        .collect();
    let source: Vec<Vector3<f64>> = target.iter().zip(&offsets).map(|(p, e)| inv.apply(&(p + e))).collect();
    let empirical = (offsets.iter().map(|e| e.norm_squared()).sum::<f64>() / offsets.len() as f64).sqrt();
    let res = icp_align(&source, &target, &IcpParams::default()).unwrap();
    assert!(
        (res.rms - empirical).abs() <= 0.2 * empirical,
        "rms {} vs noise {}",
        res.rms,
        empirical
    );
}

#[test]
fn shifted_days_give_identical_deltas() {
    let pts = [(0.0, 100.0), (7.0, 80.0), (14.0, 60.0)];
    let make = |shift: f64| -> Vec<SeriesEntry> {
        pts.iter()
            .map(|&(d, a)| SeriesEntry {
                day: d + shift,
                metrics: metrics(a, a / 20.0, a / 50.0),
                alignment: None,
            })
            .collect()
    };
    let a = compute_deltas(&make(0.0)).unwrap();
    let b = compute_deltas(&make(1000.0)).unwrap();
    for (x, y) in a.timepoints.iter().zip(&b.timepoints) {
        assert_eq!(x.delta_area_cm2, y.delta_area_cm2);
        assert_eq!(x.percent_area_change, y.percent_area_change);
    }
    let (ra, rb) = (a.healing_rate_cm2_per_day.unwrap(), b.healing_rate_cm2_per_day.unwrap());
    assert!((ra - rb).abs() < 1e-9);
    assert!((a.projected_recovery_day.unwrap() + 1000.0 - b.projected_recovery_day.unwrap()).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn icp_recovers_planted_transforms(
        ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
        degrees in 0.0f64..20.0,
        tx in -0.3f64..0.3, ty in -0.3f64..0.3, tz in -0.3f64..0.3,
        seed in 0u64..1000,
    ) {
        let axis = Vector3::new(ax, ay, az);
        prop_assume!(axis.norm() > 0.1);
        let target = bumpy_patch(400, seed);
        let g = planted(axis, degrees, Vector3::new(tx, ty, tz));
        let inv = g.inverse();
        let source: Vec<Vector3<f64>> = target.iter().map(|p| inv.apply(p)).collect();
        let res = icp_align(&source, &target, &IcpParams { max_iterations: 200, tolerance: 0.0, ..IcpParams::default() }).unwrap();
        prop_assert!((res.transform.rotation - g.rotation).abs().max() < 1e-6, "{:?}", res.rms_trace);
        prop_assert!((res.transform.translation - g.translation).abs().max() < 1e-6);
        prop_assert!(res.rms < 1e-9);
        for w in res.rms_trace.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn grid_nearest_equals_brute_force(
        pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -1.0f64..1.0), 1..300),
        dup in 0usize..300,
        queries in proptest::collection::vec((-7.0f64..7.0, -7.0f64..7.0, -3.0f64..3.0), 1..40),
    ) {
        let mut points: Vec<Vector3<f64>> = pts.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect();
        let copy = points[dup % points.len()];
        points.push(copy);
        let grid = PointGrid::new(&points).unwrap();
        for &(x, y, z) in &queries {
            let q = Vector3::new(x, y, z);
            let (gi, gd) = grid.nearest(&q);
            let (bi, bd) = nearest_brute_force(&points, &q).unwrap();
            prop_assert_eq!(gi, bi);
            prop_assert_eq!(gd.to_bits(), bd.to_bits());
        }
        for (i, p) in points.iter().enumerate() {
            let (gi, gd) = grid.nearest(p);
            prop_assert_eq!(gd, 0.0);
            prop_assert!(gi <= i);
        }
    }

    #[test]
    fn mirrored_targets_still_give_proper_rotations(
        pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 4..30),
        axis in 0usize..3,
    ) {
        let src: Vec<Vector3<f64>> = pts.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect();
        let dst: Vec<Vector3<f64>> = src.iter().map(|p| { let mut q = *p; q[axis] = -q[axis]; q }).collect();
        if let Ok(fit) = rigid_fit_svd(&src, &dst) {
            prop_assert!((fit.rotation.determinant() - 1.0).abs() < 1e-9);
            prop_assert!((fit.rotation.transpose() * fit.rotation - Matrix3::identity()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn deltas_are_invariant_to_time_shift(
        areas in proptest::collection::vec(1.0f64..200.0, 1..8),
        gaps in proptest::collection::vec(0.5f64..30.0, 8),
        shift in -500.0f64..500.0,
    ) {
        let mut day = 0.0;
        let base: Vec<SeriesEntry> = areas.iter().zip(&gaps).map(|(&a, &g)| {
            let e = SeriesEntry { day, metrics: metrics(a, a / 10.0, a / 40.0), alignment: None };
            day += g;
            e
        }).collect();
        let shifted: Vec<SeriesEntry> = base.iter().cloned().map(|mut e| { e.day += shift; e }).collect();
        let a = compute_deltas(&base).unwrap();
        let b = compute_deltas(&shifted).unwrap();
        for (x, y) in a.timepoints.iter().zip(&b.timepoints) {
            prop_assert_eq!(x.delta_area_cm2, y.delta_area_cm2);
            prop_assert_eq!(x.delta_d_max_mm, y.delta_d_max_mm);
            prop_assert_eq!(x.delta_volume_cm3, y.delta_volume_cm3);
        }
        prop_assert_eq!(a.healing_rate_cm2_per_day.is_some(), b.healing_rate_cm2_per_day.is_some());
        if let (Some(ra), Some(rb)) = (a.healing_rate_cm2_per_day, b.healing_rate_cm2_per_day) {
            prop_assert!((ra - rb).abs() <= 1e-9 * ra.abs().max(1.0));
        }
        prop_assert_eq!(a.projected_recovery_day.is_some(), b.projected_recovery_day.is_some());
    }
}
