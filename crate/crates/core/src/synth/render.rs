//! Object rendering in linear RGB `[0, 1]`; conversion to `[-1, 1]` happens
//! once the whole image is composed.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Surface pattern of the foreground object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Smooth,
    Speckled,
    Striped,
}

/// Outline of the foreground object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disc,
    /// A disc whose radius is perturbed by a few seeded low harmonics.
    Blob,
}

/// Planar RGB image, channel-major, values nominally in `[0, 1]`.
#[derive(Clone, Debug)]
pub(crate) struct Canvas {
    pub size: usize,
    pub rgb: Vec<f64>,
}

impl Canvas {
    pub fn filled(size: usize, color: [f64; 3]) -> Self {
        let plane = size * size;
        let mut rgb = Vec::with_capacity(3 * plane);
        for c in color {
            rgb.extend(std::iter::repeat_n(c, plane));
        }
        Canvas { size, rgb }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.rgb[(c * self.size + y) * self.size + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.rgb[(c * self.size + y) * self.size + x] = v;
    }

    /// Linear blend toward `color` with per-pixel weight `alpha`.
    pub fn blend(&mut self, y: usize, x: usize, color: [f64; 3], alpha: f64) {
        for (c, &target) in color.iter().enumerate() {
            let v = self.get(c, y, x);
            self.set(c, y, x, v + alpha * (target - v));
        }
    }
}

/// HSV (hue in degrees) to RGB.
pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [f64; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = val * sat;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [r + m, g + m, b + m]
}

/// RGB to (hue in degrees, saturation, value).
pub fn rgb_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let hue = if d <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let sat = if max <= 0.0 { 0.0 } else { d / max };
    (hue, sat, max)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Parameters of one drawn object, sampled from a class spec.
#[derive(Clone, Debug)]
pub(crate) struct Object {
    pub center: (f64, f64),
    pub radius: f64,
    pub color: [f64; 3],
    pub shape: ShapeKind,
    pub texture: Texture,
    /// (amplitude, phase) per harmonic 2..=4 for blobs.
    pub harmonics: [(f64, f64); 3],
    pub stripe_angle: f64,
    pub stripe_period: f64,
}

impl Object {
    fn radius_at(&self, theta: f64) -> f64 {
        match self.shape {
            ShapeKind::Disc => self.radius,
            ShapeKind::Blob => {
                let wobble: f64 = self
                    .harmonics
                    .iter()
                    .enumerate()
                    .map(|(i, &(a, p))| a * ((i as f64 + 2.0) * theta + p).sin())
                    .sum();
                self.radius * (1.0 + wobble)
            }
        }
    }

    /// Soft coverage in `[0, 1]` of the pixel centred at `(y, x)`.
    pub fn coverage(&self, y: f64, x: f64) -> f64 {
        let dy = y - self.center.0;
        let dx = x - self.center.1;
        let r = self.radius_at(dy.atan2(dx));
        1.0 - smoothstep(r - 0.5, r + 0.5, (dy * dy + dx * dx).sqrt())
    }
}

/// Paints `obj` onto `canvas`, returning the coverage mask.
pub(crate) fn draw(canvas: &mut Canvas, obj: &Object, rng: &mut impl Rng) -> Vec<f64> {
    let s = canvas.size;
    let speckle = Normal::new(0.0, 1.0).expect("unit normal");
    let (sin_a, cos_a) = obj.stripe_angle.sin_cos();
    let mut mask = vec![0.0; s * s];
    for y in 0..s {
        for x in 0..s {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let cov = obj.coverage(fy, fx);
            // Draw the speckle even outside the object so the rng stream
            // does not depend on the outline.
            let noise: f64 = speckle.sample(rng);
            if cov <= 0.0 {
                continue;
            }
            mask[y * s + x] = cov;
            // Gentle radial shading keeps smooth objects from being flat.
            let d = ((fy - obj.center.0).powi(2) + (fx - obj.center.1).powi(2)).sqrt() / obj.radius.max(1.0);
            let mut shade = 1.0 - 0.15 * d.min(1.2);
            match obj.texture {
                Texture::Smooth => {}
                Texture::Speckled => {
                    if noise > 0.9 {
                        shade *= 0.55;
                    }
                }
                Texture::Striped => {
                    let t = (fx * cos_a + fy * sin_a) / obj.stripe_period;
                    shade *= 0.8 + 0.2 * (std::f64::consts::TAU * t).sin();
                }
            }
            let color = obj.color.map(|c| (c * shade).clamp(0.0, 1.0));
            canvas.blend(y, x, color, cov);
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_round_trip() {
        for hue in [0.0, 10.0, 59.0, 120.0, 200.0, 300.0, 359.0] {
            let rgb = hsv_to_rgb(hue, 0.8, 0.7);
            let (h, s, v) = rgb_to_hsv(rgb);
            assert!((h - hue).abs() < 1e-9, "{hue} -> {h}");
            assert!((s - 0.8).abs() < 1e-12);
            assert!((v - 0.7).abs() < 1e-12);
        }
    }
}
