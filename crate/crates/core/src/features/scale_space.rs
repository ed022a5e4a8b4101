//! Gaussian and Difference-of-Gaussian pyramids.

use crate::image::ImageBuffer;

use super::{FeatureError, SiftParams};

/// Single-channel `f32` plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn from_image(image: &ImageBuffer) -> Self {
        Self::new(image.width(), image.height(), image.to_unit_f32())
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    fn at_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.at(x, y)
    }

    /// Separable Gaussian blur with replicated borders.
    ///
    /// Each output is `centre + sum(w_i * (x_i - centre))`, so constant
    /// regions are preserved exactly.
    pub fn gaussian_blur(&self, sigma: f64) -> Plane {
        if sigma <= 0.0 {
            return self.clone();
        }
        let kernel = gaussian_kernel(sigma);
        let r = (kernel.len() / 2) as isize;
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let c = self.at(x, y);
                let mut acc = 0.0f32;
                for (k, &wk) in kernel.iter().enumerate() {
                    let xx = x as isize + k as isize - r;
                    acc += wk * (self.at_clamped(xx, y as isize) - c);
                }
                tmp[y * w + x] = c + acc;
            }
        }
        let tmp = Plane::new(w, h, tmp);
        let mut out = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let c = tmp.at(x, y);
                let mut acc = 0.0f32;
                for (k, &wk) in kernel.iter().enumerate() {
                    let yy = y as isize + k as isize - r;
                    acc += wk * (tmp.at_clamped(x as isize, yy) - c);
                }
                out[y * w + x] = c + acc;
            }
        }
        Plane::new(w, h, out)
    }

    /// Keeps every second pixel.
    pub fn downsample(&self) -> Plane {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.at(2 * x, 2 * y));
            }
        }
        Plane::new(w, h, data)
    }

    /// Bilinear 2x upsampling.
    pub fn upsample(&self) -> Plane {
        let (w, h) = (self.width * 2, self.height * 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = y as f32 * 0.5;
            let y0 = (sy.floor() as usize).min(self.height - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            let fy = sy - y0 as f32;
            for x in 0..w {
                let sx = x as f32 * 0.5;
                let x0 = (sx.floor() as usize).min(self.width - 1);
                let x1 = (x0 + 1).min(self.width - 1);
                let fx = sx - x0 as f32;
                let top = lerp(self.at(x0, y0), self.at(x1, y0), fx);
                let bottom = lerp(self.at(x0, y1), self.at(x1, y1), fx);
                data.push(lerp(top, bottom, fy));
            }
        }
        Plane::new(w, h, data)
    }

    pub fn sub(&self, other: &Plane) -> Plane {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Plane::new(self.width, self.height, data)
    }
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (4.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

/// Gaussian pyramid `L` and its DoG stacks `D`.
#[derive(Debug, Clone)]
pub struct ScaleSpace {
    /// `octaves[o][i]` is blurred to `base_sigma * k^i` in octave-local pixels.
    pub octaves: Vec<Vec<Plane>>,
    /// `dog[o][i] = octaves[o][i + 1] - octaves[o][i]`.
    pub dog: Vec<Vec<Plane>>,
    pub base_sigma: f64,
    pub k: f64,
    pub scales_per_octave: usize,
    /// Factor from octave-0 pixels to input pixels (0.5 when upsampled).
    pub input_scale: f64,
}

impl ScaleSpace {
    /// Sigma (octave-local units) of Gaussian level `level`, fractional allowed.
    pub fn level_sigma(&self, level: f64) -> f64 {
        self.base_sigma * self.k.powf(level)
    }

    /// Sigma of a level expressed in input-image pixels.
    pub fn absolute_sigma(&self, octave: usize, level: f64) -> f64 {
        self.level_sigma(level) * (1u64 << octave) as f64 * self.input_scale
    }
}

pub fn build_scale_space(image: &ImageBuffer, params: &SiftParams) -> Result<ScaleSpace, FeatureError> {
    if image.width() < 32 || image.height() < 32 {
        return Err(FeatureError::ImageTooSmall {
            width: image.width(),
            height: image.height(),
        });
    }
    let s = params.scales_per_octave;
    let k = 2f64.powf(1.0 / s as f64);
    let sigma0 = params.base_sigma;

    let mut base = Plane::from_image(image);
    let mut input_blur = params.assumed_blur;
    let mut input_scale = 1.0;
    if params.upsample {
        base = base.upsample();
        input_blur *= 2.0;
        input_scale = 0.5;
    }
    let initial = (sigma0 * sigma0 - input_blur * input_blur).max(0.01).sqrt();
    base = base.gaussian_blur(initial);

    // incremental blur taking level i-1 to level i
    let increments: Vec<f64> = (1..s + 3)
        .map(|i| {
            let prev = sigma0 * k.powi(i as i32 - 1);
            let next = sigma0 * k.powi(i as i32);
            (next * next - prev * prev).sqrt()
        })
        .collect();

    let mut octaves: Vec<Vec<Plane>> = Vec::new();
    for o in 0..params.octaves {
        if o > 0 {
            let prev: &Vec<Plane> = &octaves[o - 1];
            let next_base = prev[s].downsample();
            if next_base.width < 8 || next_base.height < 8 {
                break;
            }
            base = next_base;
        }
        let mut levels = Vec::with_capacity(s + 3);
        levels.push(base.clone());
        for inc in &increments {
            let next = levels.last().expect("non-empty").gaussian_blur(*inc);
            levels.push(next);
        }
        octaves.push(levels);
    }

    let dog = octaves
        .iter()
        .map(|levels| levels.windows(2).map(|w| w[1].sub(&w[0])).collect())
        .collect();

    Ok(ScaleSpace {
        octaves,
        dog,
        base_sigma: sigma0,
        k,
        scales_per_octave: s,
        input_scale,
    })
}
