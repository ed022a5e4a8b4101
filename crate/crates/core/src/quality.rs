//! Acquisition gating (resolution, blur, exposure) and reconstruction
//! confidence scoring.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageBuffer;

#[derive(Debug, Error, PartialEq)]
pub enum QcError {
    #[error("image {width}x{height} has no interior pixels for the Laplacian stencil")]
    NoInterior { width: usize, height: usize },
}

/// Thresholds applied by [`validate_image`] and [`validate_image_set`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcPolicy {
    /// Minimum long side in pixels.
    pub min_width: usize,
    /// Minimum short side in pixels.
    pub min_height: usize,
    /// Images whose Laplacian variance falls below this are rejected as blurred.
    pub min_laplacian_variance: f64,
    pub underexposed_below: f64,
    pub overexposed_above: f64,
    pub min_images: usize,
    /// Frames beyond this count are uniformly subsampled at ingest.
    pub max_frames: usize,
}

impl Default for QcPolicy {
    fn default() -> Self {
        Self {
            min_width: 800,
            min_height: 600,
            min_laplacian_variance: 100.0,
            underexposed_below: 40.0,
            overexposed_above: 215.0,
            min_images: 6,
            max_frames: 15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExposureStatus {
    Under,
    Ok,
    Over,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcVerdict {
    pub width: usize,
    pub height: usize,
    pub resolution_ok: bool,
    pub laplacian_variance: f64,
    pub sharpness_ok: bool,
    pub mean_intensity: f64,
    pub exposure_status: ExposureStatus,
    pub accepted: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetVerdict {
    pub accepted_count: usize,
    pub passed: bool,
    pub reasons: Vec<String>,
}

/// Variance of the 4-neighbour Laplacian response over interior pixels.
pub fn laplacian_variance(image: &ImageBuffer) -> Result<f64, QcError> {
    let (w, h) = (image.width(), image.height());
    if w < 3 || h < 3 {
        return Err(QcError::NoInterior { width: w, height: h });
    }
    let px = |x: usize, y: usize| image.get(x, y) as f64;
    let n = ((w - 2) * (h - 2)) as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let lap = px(x - 1, y) + px(x + 1, y) + px(x, y - 1) + px(x, y + 1) - 4.0 * px(x, y);
            sum += lap;
            sum_sq += lap * lap;
        }
    }
    let mean = sum / n;
    Ok((sum_sq / n - mean * mean).max(0.0))
}

/// Runs every per-image check. Resolution is compared orientation-agnostically
/// (long side against `min_width`, short side against `min_height`).
pub fn validate_image(image: &ImageBuffer, policy: &QcPolicy) -> QcVerdict {
    let (w, h) = (image.width(), image.height());
    let mut reasons = Vec::new();

    let (long, short) = (w.max(h), w.min(h));
    let resolution_ok = long >= policy.min_width && short >= policy.min_height;
    if !resolution_ok {
        reasons.push(format!(
            "resolution {w}x{h} below minimum {}x{}",
            policy.min_width, policy.min_height
        ));
    }

    let laplacian_variance = laplacian_variance(image).unwrap_or(0.0);
    let sharpness_ok = laplacian_variance >= policy.min_laplacian_variance;
    if !sharpness_ok {
        reasons.push(format!(
            "laplacian variance {laplacian_variance:.2} below blur threshold {}",
            policy.min_laplacian_variance
        ));
    }

    let mean_intensity = image.mean_intensity();
    let exposure_status = if mean_intensity < policy.underexposed_below {
        reasons.push(format!("underexposed: mean intensity {mean_intensity:.1}"));
        ExposureStatus::Under
    } else if mean_intensity > policy.overexposed_above {
        reasons.push(format!("overexposed: mean intensity {mean_intensity:.1}"));
        ExposureStatus::Over
    } else {
        ExposureStatus::Ok
    };

    QcVerdict {
        width: w,
        height: h,
        resolution_ok,
        laplacian_variance,
        sharpness_ok,
        mean_intensity,
        exposure_status,
        accepted: resolution_ok && sharpness_ok && exposure_status == ExposureStatus::Ok,
        reasons,
    }
}

pub fn validate_image_set(images: &[ImageBuffer], policy: &QcPolicy) -> (Vec<QcVerdict>, SetVerdict) {
    let verdicts: Vec<QcVerdict> = images.iter().map(|i| validate_image(i, policy)).collect();
    let set = summarize_verdicts(&verdicts, policy);
    (verdicts, set)
}

/// Set-level verdict from already computed per-image verdicts.
pub fn summarize_verdicts(verdicts: &[QcVerdict], policy: &QcPolicy) -> SetVerdict {
    let accepted_count = verdicts.iter().filter(|v| v.accepted).count();
    let mut reasons = Vec::new();
    if verdicts.is_empty() {
        reasons.push("no images".to_string());
    } else if accepted_count < policy.min_images {
        reasons.push(format!(
            "only {accepted_count} accepted images; a minimum of {} is required",
            policy.min_images
        ));
    }
    SetVerdict {
        accepted_count,
        passed: reasons.is_empty(),
        reasons,
    }
}

/// Indices of at most `max` frames, uniformly spread over `count` inputs.
pub fn subsample_frames(count: usize, max: usize) -> Vec<usize> {
    if count <= max {
        return (0..count).collect();
    }
    if max <= 1 {
        return (0..max).collect();
    }
    (0..max)
        .map(|i| (i as f64 * (count - 1) as f64 / (max - 1) as f64).round() as usize)
        .collect()
}

/// Free parameters of the confidence score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidenceWeights {
    pub w_images: f64,
    pub w_inliers: f64,
    pub w_reprojection: f64,
    pub w_coverage: f64,
    /// Reprojection error (px) that maps to a normalized error of 1.
    pub reprojection_norm_px: f64,
    /// Image count that maps to a normalized count of 1.
    pub full_image_count: usize,
}

impl Default for ConfidenceWeights {
    fn default() -> Self {
        Self {
            w_images: 1.0,
            w_inliers: 1.0,
            w_reprojection: 1.0,
            w_coverage: 1.0,
            reprojection_norm_px: 2.0,
            full_image_count: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceIndicators {
    pub n_images: usize,
    pub matched_features: usize,
    pub inlier_ratio: f64,
    pub mean_reprojection_error_px: f64,
    pub median_reprojection_error_px: f64,
    pub coverage: f64,
    pub weights: ConfidenceWeights,
}

impl ConfidenceIndicators {
    pub fn normalized_image_count(&self) -> f64 {
        (self.n_images as f64 / self.weights.full_image_count.max(1) as f64).clamp(0.0, 1.0)
    }

    pub fn normalized_reprojection_error(&self) -> f64 {
        (self.mean_reprojection_error_px / self.weights.reprojection_norm_px).clamp(0.0, 1.0)
    }
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logistic squash of the weighted indicator sum.
pub fn confidence_score(ind: &ConfidenceIndicators) -> f64 {
    let w = &ind.weights;
    let z = w.w_images * ind.normalized_image_count()
        + w.w_inliers * ind.inlier_ratio.clamp(0.0, 1.0)
        + w.w_reprojection * (1.0 - ind.normalized_reprojection_error())
        + w.w_coverage * ind.coverage.clamp(0.0, 1.0);
    logistic(z)
}
