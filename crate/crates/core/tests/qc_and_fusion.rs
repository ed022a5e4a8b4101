use burnscope::image::ImageBuffer;
use burnscope::mapping::{evaluate_mask, fuse_view_probabilities, BurnMask};
use burnscope::quality::{
    confidence_score, laplacian_variance, logistic, summarize_verdicts, validate_image, ConfidenceIndicators,
    ConfidenceWeights, QcPolicy,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_texture(w: usize, h: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuffer::from_fn(w, h, |_, _| rng.random_range(30..=225)).unwrap()
}

fn box_blur(img: &ImageBuffer, radius: usize) -> ImageBuffer {
    let (w, h) = (img.width(), img.height());
    let px = img.pixels();
    ImageBuffer::from_fn(w, h, |x, y| {
        let (mut s, mut n) = (0u32, 0u32);
        for yy in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
            for xx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                s += px[yy * w + xx] as u32;
                n += 1;
            }
        }
        ((s + n / 2) / n) as u8
    })
    .unwrap()
}

fn indicators(n: usize, inl: f64, err: f64, cov: f64) -> ConfidenceIndicators {
    ConfidenceIndicators {
        n_images: n,
        matched_features: 1000,
        inlier_ratio: inl,
        mean_reprojection_error_px: err,
        median_reprojection_error_px: err,
        coverage: cov,
        weights: ConfidenceWeights::default(),
    }
}

#[test]
fn blurred_images_score_below_sharp_ones() {
    for seed in 0..20 {
        let sharp = random_texture(96, 72, seed);
        let blurred = box_blur(&sharp, 1 + (seed as usize % 3));
        let (s, b) = (
            laplacian_variance(&sharp).unwrap(),
            laplacian_variance(&blurred).unwrap(),
        );
        assert!(b < s, "seed {seed}: blurred {b} sharp {s}");
    }
}

#[test]
fn constant_images_have_exactly_zero_variance() {
    for v in [0u8, 1, 127, 255] {
        let img = ImageBuffer::from_fn(20, 15, |_, _| v).unwrap();
        assert_eq!(laplacian_variance(&img).unwrap(), 0.0);
    }
}

#[test]
fn vga_resolution_is_rejected_by_default_policy() {
    let img = random_texture(640, 480, 3);
    let verdict = validate_image(&img, &QcPolicy::default());
    assert!(!verdict.resolution_ok);
    assert!(!verdict.accepted);
}

#[test]
fn logistic_midpoint() {
    assert_eq!(logistic(0.0), 0.5);
}

#[test]
fn dice_score_complements_dice_loss_without_smoothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let a = BurnMask::new(16, 12, (0..16 * 12).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let vals: Vec<f64> = (0..16 * 12)
            .map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 })
            .collect();
        let b = BurnMask::new(16, 12, vals).unwrap();
        let s = evaluate_mask(&a, &b, 0.5, 1e-300).unwrap();
        assert!((s.dice_score - (1.0 - s.dice_loss)).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn fusion_matches_complement_product(ps in proptest::collection::vec(0.0f64..=1.0, 0..12)) {
        let ours = fuse_view_probabilities(&ps).unwrap();
        let mut keep = 1.0;
        for p in &ps {
            keep *= 1.0 - p;
        }
        prop_assert!((ours - (1.0 - keep)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ours));
    }

    #[test]
    fn fusion_is_permutation_invariant(ps in proptest::collection::vec(0.0f64..=1.0, 1..10), seed in any::<u64>()) {
        let mut shuffled = ps.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        let a = fuse_view_probabilities(&ps).unwrap();
        let b = fuse_view_probabilities(&shuffled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn adding_a_view_never_lowers_fusion(ps in proptest::collection::vec(0.0f64..=1.0, 0..10), extra in 0.0f64..=1.0) {
        let before = fuse_view_probabilities(&ps).unwrap();
        let mut more = ps.clone();
        more.push(extra);
        prop_assert!(fuse_view_probabilities(&more).unwrap() >= before);
    }

    #[test]
    fn out_of_range_probabilities_are_refused(p in prop_oneof![-10.0f64..-1e-9, 1.0000001f64..10.0]) {
        prop_assert!(fuse_view_probabilities(&[0.2, p]).is_err());
    }

    #[test]
    fn confidence_is_strictly_inside_unit_interval(
        n in 0usize..100, inl in -1.0f64..2.0, err in 0.0f64..100.0, cov in -1.0f64..2.0,
    ) {
        let c = confidence_score(&indicators(n, inl, err, cov));
        prop_assert!(c > 0.0 && c < 1.0);
    }

    #[test]
    fn confidence_rises_with_each_positive_indicator(
        n in 0usize..14, inl in 0.0f64..0.9, err in 0.1f64..1.9, cov in 0.0f64..0.9, step in 0.01f64..0.1,
    ) {
        let base = confidence_score(&indicators(n, inl, err, cov));
        prop_assert!(confidence_score(&indicators(n + 1, inl, err, cov)) > base);
        prop_assert!(confidence_score(&indicators(n, inl + step, err, cov)) > base);
        prop_assert!(confidence_score(&indicators(n, inl, err - 0.05, cov)) > base);
        prop_assert!(confidence_score(&indicators(n, inl, err, cov + step)) > base);
    }

    #[test]
    fn laplacian_variance_ignores_brightness_offset(seed in any::<u64>(), shift in 0u8..20) {
        let img = {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ImageBuffer::from_fn(24, 18, |_, _| rng.random_range(0..=200)).unwrap()
        };
        let shifted = ImageBuffer::new(24, 18, img.pixels().iter().map(|p| p + shift).collect()).unwrap();
        prop_assert_eq!(laplacian_variance(&img).unwrap(), laplacian_variance(&shifted).unwrap());
    }

    #[test]
    fn set_verdict_counts_accepted_images(flags in proptest::collection::vec(any::<bool>(), 0..20)) {
        let policy = QcPolicy::default();
        let good = validate_image(&random_texture(800, 600, 1), &policy);
        prop_assert!(good.accepted);
        let bad = validate_image(&random_texture(640, 480, 1), &policy);
        let verdicts: Vec<_> = flags.iter().map(|&f| if f { good.clone() } else { bad.clone() }).collect();
        let set = summarize_verdicts(&verdicts, &policy);
        let n = flags.iter().filter(|f| **f).count();
        prop_assert_eq!(set.accepted_count, n);
        prop_assert_eq!(set.passed, n >= policy.min_images);
        if !set.passed && n > 0 {
            prop_assert!(set.reasons.iter().any(|r| r.contains("minimum of 6")));
        }
    }
}
