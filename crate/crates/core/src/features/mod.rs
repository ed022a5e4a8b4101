//! Scale-invariant keypoints, 128-D descriptors and ratio-test matching.

mod descriptor;
mod keypoints;
mod matching;
mod scale_space;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageBuffer;

pub use descriptor::{compute_descriptors, Descriptor, DescriptorSet, SkipReason, DESCRIPTOR_LEN};
pub use keypoints::{detect_keypoints, Keypoint};
pub use matching::{match_descriptors, mutual_matches, ratio_test, Match};
pub use scale_space::{build_scale_space, Plane, ScaleSpace};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("image {width}x{height} is smaller than the 32x32 minimum")]
    ImageTooSmall { width: usize, height: usize },
    #[error("ratio threshold {0} must lie in (0, 1)")]
    InvalidRatio(f64),
    #[error("need at least 2 candidate descriptors, got {0}")]
    InsufficientCandidates(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiftParams {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub base_sigma: f64,
    /// Blur already present in the input image.
    pub assumed_blur: f64,
    /// Double the input resolution before building octave 0.
    pub upsample: bool,
    /// Minimum |D| at the refined extremum, on [0,1] intensities.
    pub contrast_threshold: f64,
    /// Principal-curvature ratio bound for the edge test.
    pub edge_ratio: f64,
    pub max_refine_steps: usize,
    pub orientation_bins: usize,
    pub peak_ratio: f64,
    /// Keep only the strongest responses when set.
    pub max_keypoints: Option<usize>,
    pub ratio_threshold: f64,
}

impl Default for SiftParams {
    fn default() -> Self {
        Self {
            octaves: 4,
            scales_per_octave: 3,
            base_sigma: 1.6,
            assumed_blur: 0.5,
            upsample: false,
            contrast_threshold: 0.03,
            edge_ratio: 10.0,
            max_refine_steps: 5,
            orientation_bins: 36,
            peak_ratio: 0.8,
            max_keypoints: None,
            ratio_threshold: 0.75,
        }
    }
}

/// Keypoints paired with their descriptors for one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatures {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
    /// Keypoints dropped because no descriptor could be formed.
    pub skipped: usize,
}

impl ImageFeatures {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

/// Full detect-and-describe pipeline for one image.
pub fn extract_features(image: &ImageBuffer, params: &SiftParams) -> Result<ImageFeatures, FeatureError> {
    let space = build_scale_space(image, params)?;
    let keypoints = detect_keypoints(&space, params);
    let set = compute_descriptors(&space, &keypoints);
    Ok(ImageFeatures {
        keypoints: set.keypoint_indices.iter().map(|&i| keypoints[i].clone()).collect(),
        descriptors: set.descriptors,
        skipped: set.skipped.len(),
    })
}

/// Random Gaussian-blob texture for tests.
#[cfg(test)]
pub(crate) fn speckle_texture(width: usize, height: usize, seed: u64) -> ImageBuffer {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..(width * height / 120))
        .map(|_| {
            (
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
                rng.random_range(1.5..5.0),
                rng.random_range(-60.0..60.0),
            )
        })
        .collect();
    let mut field = vec![128.0f64; width * height];
    for &(bx, by, s, a) in &blobs {
        let r = (3.0 * s).ceil() as isize;
        for y in (by as isize - r).max(0)..(by as isize + r).min(height as isize) {
            for x in (bx as isize - r).max(0)..(bx as isize + r).min(width as isize) {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                field[y as usize * width + x as usize] += a * (-d2 / (2.0 * s * s)).exp();
            }
        }
    }
    ImageBuffer::from_fn(width, height, |x, y| {
        field[y * width + x].round().clamp(0.0, 255.0) as u8
    })
    .unwrap()
}
