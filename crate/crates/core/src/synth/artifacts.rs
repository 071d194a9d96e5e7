//! Confound artifacts and the metrics that measure them on `[-1, 1]` images.

use serde::{Deserialize, Serialize};

use super::render::{hsv_to_rgb, Canvas};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-class injection probability and the intensity range of one artifact.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArtifactSpec {
    /// One probability per class; empty means never injected.
    pub probability: Vec<f64>,
    pub intensity: [f64; 2],
}

/// Background tint: like [`ArtifactSpec`] plus the tint hue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TintSpec {
    pub probability: Vec<f64>,
    pub intensity: [f64; 2],
    /// Hue of the tint colour, degrees.
    pub hue: f64,
}

impl Default for TintSpec {
    fn default() -> Self {
        TintSpec {
            probability: Vec::new(),
            intensity: [0.0, 0.0],
            hue: 340.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArtifactConfig {
    pub vignette: ArtifactSpec,
    pub scalebar: ArtifactSpec,
    pub background_tint: TintSpec,
}

fn check(name: &str, probability: &[f64], intensity: [f64; 2], n_classes: usize) -> Result<()> {
    if !probability.is_empty() && probability.len() != n_classes {
        return Err(Error::Config(format!(
            "{name}: {} probabilities for {n_classes} classes",
            probability.len()
        )));
    }
    if let Some(p) = probability.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Config(format!("{name}: probability {p} outside [0, 1]")));
    }
    let [lo, hi] = intensity;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::Config(format!("{name}: intensity range [{lo}, {hi}] invalid")));
    }
    Ok(())
}

impl ArtifactConfig {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        check("vignette", &self.vignette.probability, self.vignette.intensity, n_classes)?;
        check("scalebar", &self.scalebar.probability, self.scalebar.intensity, n_classes)?;
        let t = &self.background_tint;
        check("background_tint", &t.probability, t.intensity, n_classes)?;
        if !t.hue.is_finite() {
            return Err(Error::Config("background_tint hue must be finite".into()));
        }
        Ok(())
    }
}

/// Ground truth of the artifacts drawn into one image: the intensity of each
/// artifact that was injected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub vignette: Option<f64>,
    pub scalebar: Option<f64>,
    pub tint: Option<f64>,
}

/// Darkening weight at normalised radius `rho` (1 at edge midpoints, √2 at
/// corners). Exactly 0 inside half the radius, so the central disc used by
/// [`vignette_metric`] is untouched.
pub fn vignette_mask(rho: f64) -> f64 {
    let t = ((rho - 0.5) / (std::f64::consts::SQRT_2 - 0.5)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

pub(crate) fn apply_vignette(canvas: &mut Canvas, intensity: f64) {
    let s = canvas.size;
    let half = s as f64 / 2.0;
    for y in 0..s {
        for x in 0..s {
            let dy = y as f64 + 0.5 - half;
            let dx = x as f64 + 0.5 - half;
            let k = 1.0 - intensity * vignette_mask((dy * dy + dx * dx).sqrt() / half);
            for c in 0..3 {
                let v = canvas.get(c, y, x);
                canvas.set(c, y, x, v * k);
            }
        }
    }
}

pub(crate) fn apply_tint(canvas: &mut Canvas, object_mask: &[f64], hue: f64, intensity: f64) {
    let color = hsv_to_rgb(hue, 0.5, 1.0);
    let s = canvas.size;
    for y in 0..s {
        for x in 0..s {
            canvas.blend(y, x, color, intensity * (1.0 - object_mask[y * s + x]));
        }
    }
}

/// Tick geometry shared by drawing and measuring: (tick columns, tick rows,
/// bar row).
fn scalebar_template(size: usize) -> (Vec<usize>, std::ops::Range<usize>, usize) {
    let spacing = (size / 8).max(2);
    let cols = (0..5)
        .map(|i| spacing + i * spacing)
        .filter(|&c| c + 1 < size)
        .collect();
    let bar = size.saturating_sub(3);
    (cols, size.saturating_sub(6)..bar, bar)
}

pub(crate) fn apply_scalebar(canvas: &mut Canvas, intensity: f64) {
    let s = canvas.size;
    let (cols, rows, bar) = scalebar_template(s);
    let (Some(&first), Some(&last)) = (cols.first(), cols.last()) else {
        return;
    };
    // Grey ticks at whichever extreme contrasts with the local background.
    let mut lum = 0.0;
    let mut n = 0.0;
    for y in rows.start..=bar {
        for x in first..=last {
            lum += (0..3).map(|c| canvas.get(c, y, x)).sum::<f64>() / 3.0;
            n += 1.0;
        }
    }
    let tone = if lum / n > 0.5 { 0.0 } else { 1.0 };
    let color = [tone; 3];
    for x in first..=last {
        canvas.blend(bar, x, color, intensity);
    }
    for &x in &cols {
        for y in rows.clone() {
            canvas.blend(y, x, color, intensity);
        }
    }
}

/// Views a `3 × H × W` or `1 × 3 × H × W` image as (height, width, data).
fn image_view<'a>(op: &'static str, image: &'a Tensor) -> Result<(usize, usize, &'a [f32])> {
    match image.shape() {
        &[3, h, w] | &[1, 3, h, w] => Ok((h, w, image.data())),
        s => Err(Error::shape(op, format!("expected a 3 x H x W image, got {s:?}"))),
    }
}

fn luminance(data: &[f32], h: usize, w: usize, y: usize, x: usize) -> f64 {
    let p = h * w;
    (0..3).map(|c| f64::from(data[c * p + y * w + x])).sum::<f64>() / 3.0
}

/// Mean luminance of the central disc (radius H/4) minus that of the four
/// corner quarter-discs (radius H/4). Positive when edges are darker.
pub fn vignette_metric(image: &Tensor) -> Result<f64> {
    const OP: &str = "vignette_metric";
    let (h, w, data) = image_view(OP, image)?;
    if h < 8 || w < 8 {
        return Err(Error::domain(OP, format!("image {h} x {w} smaller than 8 x 8")));
    }
    let r = h as f64 / 4.0;
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let corners = [(0.0, 0.0), (0.0, w as f64), (h as f64, 0.0), (h as f64, w as f64)];
    let (mut centre, mut nc, mut edge, mut ne) = (0.0, 0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let lum = luminance(data, h, w, y, x);
            if (py - cy).hypot(px - cx) < r {
                centre += lum;
                nc += 1.0;
            }
            if corners.iter().any(|&(qy, qx)| (py - qy).hypot(px - qx) < r) {
                edge += lum;
                ne += 1.0;
            }
        }
    }
    Ok(centre / nc - edge / ne)
}

/// Mean absolute luminance contrast between each scalebar tick pixel and its
/// left/right neighbours, over the fixed tick template along the bottom edge.
pub fn scalebar_metric(image: &Tensor) -> Result<f64> {
    let (h, w, data) = image_view("scalebar_metric", image)?;
    let (cols, rows, _) = scalebar_template(h.min(w));
    let mut total = 0.0;
    let mut n = 0.0;
    for &x in &cols {
        for y in rows.clone() {
            let here = luminance(data, h, w, y, x);
            let around = (luminance(data, h, w, y, x - 1) + luminance(data, h, w, y, x + 1)) / 2.0;
            total += (here - around).abs();
            n += 1.0;
        }
    }
    Ok(if n > 0.0 { total / n } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canvas_tensor(c: &Canvas) -> Tensor {
        let s = c.size;
        Tensor::new([3, s, s], c.rgb.iter().map(|&v| (2.0 * v - 1.0) as f32).collect()).unwrap()
    }

    #[test]
    fn uniform_image_has_no_vignette_or_scalebar() {
        let img = Tensor::full([3, 32, 32], 0.3);
        assert_eq!(vignette_metric(&img).unwrap(), 0.0);
        assert_eq!(scalebar_metric(&img).unwrap(), 0.0);
    }

    #[test]
    fn vignette_mask_leaves_centre_untouched() {
        assert_eq!(vignette_mask(0.0), 0.0);
        assert_eq!(vignette_mask(0.5), 0.0);
        assert_eq!(vignette_mask(std::f64::consts::SQRT_2), 1.0);
        let mut c = Canvas::filled(32, [0.7; 3]);
        apply_vignette(&mut c, 0.8);
        assert!(vignette_metric(&canvas_tensor(&c)).unwrap() > 0.3);
    }

    #[test]
    fn scalebar_contrast_scales_with_intensity() {
        for bg in [0.2, 0.8] {
            let mut c = Canvas::filled(32, [bg; 3]);
            apply_scalebar(&mut c, 0.8);
            let m = scalebar_metric(&canvas_tensor(&c)).unwrap();
            assert!(m >= 0.4, "background {bg}: {m}");
        }
    }

    #[test]
    fn rejects_small_or_misshapen_images() {
        assert!(vignette_metric(&Tensor::zeros([3, 4, 4])).is_err());
        assert!(vignette_metric(&Tensor::zeros([2, 3, 8, 8])).is_err());
    }
}
