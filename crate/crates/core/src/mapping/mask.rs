//! Per-view burn probability masks and their overlap/cross-entropy scores.

use serde::{Deserialize, Serialize};

use super::MappingError;
use crate::image::ImageBuffer;

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurnMask {
    pub width: usize,
    pub height: usize,
    /// Row-major probabilities in `[0, 1]`.
    pub values: Vec<f64>,
}

impl BurnMask {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, MappingError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(MappingError::Shape(format!(
                "{} values cannot form a {width}x{height} mask",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MappingError::Domain(*v));
        }
        Ok(Self { width, height, values })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self, MappingError> {
        let values = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, values)
    }

    /// Grayscale intensity / 255.
    pub fn from_image(image: &ImageBuffer) -> Self {
        Self {
            width: image.width(),
            height: image.height(),
            values: image.pixels().iter().map(|&p| p as f64 / 255.0).collect(),
        }
    }

    /// Decodes an 8-bit PNG (or JPEG) mask.
    pub fn decode(bytes: &[u8]) -> Result<Self, MappingError> {
        let image = ImageBuffer::decode(bytes).map_err(|e| MappingError::Decode(e.to_string()))?;
        Ok(Self::from_image(&image))
    }

    /// Quantizes to an 8-bit image (probability x 255, rounded).
    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer::from_fn(self.width, self.height, |x, y| {
            (self.values[y * self.width + x] * 255.0).round() as u8
        })
        .expect("mask dimensions are non-zero")
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Bilinear sample with integer coordinates at pixel centres; points
    /// outside the grid are clamped to its border.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let top = self.get(x0, y0) + fx * (self.get(x1, y0) - self.get(x0, y0));
        let bottom = self.get(x0, y1) + fx * (self.get(x1, y1) - self.get(x0, y1));
        top + fy * (bottom - top)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskScores {
    pub dice_loss: f64,
    pub bce_loss: f64,
    pub combined_loss: f64,
    /// Plain overlap coefficient (1 when both masks are empty).
    pub dice_score: f64,
}

pub fn evaluate_mask(pred: &BurnMask, gt: &BurnMask, alpha: f64, epsilon: f64) -> Result<MaskScores, MappingError> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(MappingError::Shape(format!(
            "prediction is {}x{}, reference is {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    if !(0.0..=1.0).contains(&alpha) || !(epsilon > 0.0) {
        return Err(MappingError::Domain(if (0.0..=1.0).contains(&alpha) {
            epsilon
        } else {
            alpha
        }));
    }
    let (mut inter, mut sum_p, mut sum_g, mut bce) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &g) in pred.values.iter().zip(&gt.values) {
        inter += p * g;
        sum_p += p;
        sum_g += g;
        let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        bce -= g * pc.ln() + (1.0 - g) * (1.0 - pc).ln();
    }
    let bce_loss = bce / pred.values.len() as f64;
    let dice_loss = 1.0 - 2.0 * inter / (sum_g + sum_p + epsilon);
    let dice_score = if sum_g + sum_p > 0.0 {
        2.0 * inter / (sum_g + sum_p)
    } else {
        1.0
    };
    Ok(MaskScores {
        dice_loss,
        bce_loss,
        combined_loss: alpha * dice_loss + (1.0 - alpha) * bce_loss,
        dice_score,
    })
}
