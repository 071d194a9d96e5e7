use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Label-preserving augmentations: random flips and brightness/contrast
/// jitter with the given maximum magnitudes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    /// Additive shift drawn from `[-brightness, brightness]`.
    pub brightness: f64,
    /// Contrast factor drawn from `[1 - contrast, 1 + contrast]`.
    pub contrast: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip: true,
            vflip: true,
            brightness: 0.1,
            contrast: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            hflip: false,
            vflip: false,
            brightness: 0.0,
            contrast: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.brightness) || !(0.0..=1.0).contains(&self.contrast) {
            return Err(Error::Config("augmentation magnitudes must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn spatial(image: &Tensor) -> (usize, usize) {
    let s = image.shape();
    match s.len() {
        0 | 1 => (1, s.first().copied().unwrap_or(1)),
        n => (s[n - 2], s[n - 1]),
    }
}

/// Mirrors every plane left to right.
pub fn hflip(image: &Tensor) -> Tensor {
    let (_, w) = spatial(image);
    let mut out = image.clone();
    for row in out.data_mut().chunks_mut(w.max(1)) {
        row.reverse();
    }
    out
}

/// Mirrors every plane top to bottom.
pub fn vflip(image: &Tensor) -> Tensor {
    let (h, w) = spatial(image);
    let mut out = image.clone();
    if h * w == 0 {
        return out;
    }
    let src = image.data();
    for (p, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
        for y in 0..h {
            let from = p * h * w + (h - 1 - y) * w;
            plane[y * w..(y + 1) * w].copy_from_slice(&src[from..from + w]);
        }
    }
    out
}

/// Adds `delta` to every value and clamps to `[-1, 1]`.
pub fn adjust_brightness(image: &Tensor, delta: f64) -> Tensor {
    image.map(|v| (f64::from(v) + delta).clamp(-1.0, 1.0) as f32)
}

/// Scales deviations from the image mean by `factor` and clamps to `[-1, 1]`.
pub fn adjust_contrast(image: &Tensor, factor: f64) -> Tensor {
    if image.is_empty() {
        return image.clone();
    }
    let mean = image.data().iter().map(|&v| f64::from(v)).sum::<f64>() / image.len() as f64;
    image.map(|v| ((f64::from(v) - mean) * factor + mean).clamp(-1.0, 1.0) as f32)
}

/// Applies a random augmentation. Always consumes the same number of draws
/// from `rng`, whatever is enabled.
pub fn augment(image: &Tensor, cfg: &AugmentConfig, rng: &mut impl Rng) -> Tensor {
    let flip_h = rng.random_bool(0.5);
    let flip_v = rng.random_bool(0.5);
    let b = rng.random_range(-1.0..=1.0) * cfg.brightness;
    let c = 1.0 + rng.random_range(-1.0..=1.0) * cfg.contrast;
    let mut out = image.clone();
    if cfg.hflip && flip_h {
        out = hflip(&out);
    }
    if cfg.vflip && flip_v {
        out = vflip(&out);
    }
    if cfg.brightness > 0.0 {
        out = adjust_brightness(&out, b);
    }
    if cfg.contrast > 0.0 {
        out = adjust_contrast(&out, c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn flips_move_pixels() {
        let img = Tensor::new([1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(hflip(&img).data(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
        assert_eq!(vflip(&img).data(), &[4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn brightness_on_black_image() {
        let img = Tensor::zeros([3, 4, 4]);
        assert!(adjust_brightness(&img, 0.1).data().iter().all(|&v| v == 0.1));
        assert!(adjust_brightness(&img, 5.0).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn disabled_augmentation_is_identity() {
        let img = Tensor::from_fn([3, 8, 8], |i| ((i as f32) * 0.13).sin());
        let mut rng = seed::rng(3);
        for _ in 0..10 {
            assert_eq!(augment(&img, &AugmentConfig::none(), &mut rng), img);
        }
    }
}
