//! Procedural labeled image datasets with controllable class-correlated
//! confounds.

mod artifacts;
mod augment;
mod render;

pub use artifacts::{scalebar_metric, vignette_mask, vignette_metric, ArtifactConfig, ArtifactRecord, ArtifactSpec, TintSpec};
pub use augment::{adjust_brightness, adjust_contrast, augment, hflip, vflip, AugmentConfig};
pub use render::{hsv_to_rgb, rgb_to_hsv, ShapeKind, Texture};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;
use render::{Canvas, Object};

/// What makes a class look like itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    /// Object hue range in degrees; may exceed 360 to wrap through red.
    pub hue_range: [f64; 2],
    pub texture: Texture,
    pub shape: ShapeKind,
    /// Object radius range as a fraction of the image side.
    pub size_range: [f64; 2],
}

/// How many images each class gets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Sizes {
    PerClass(usize),
    /// `total` images with class 0 the most frequent and the last class
    /// `ratio` times rarer, counts spaced geometrically.
    Imbalanced { total: usize, ratio: f64 },
    Explicit(Vec<usize>),
}

impl Sizes {
    pub fn counts(&self, n_classes: usize) -> Result<Vec<usize>> {
        let counts = match self {
            Sizes::PerClass(n) => vec![*n; n_classes],
            Sizes::Explicit(c) => c.clone(),
            Sizes::Imbalanced { total, ratio } => {
                if !(*ratio >= 1.0) || n_classes < 2 {
                    return Err(Error::Config(format!("imbalance ratio {ratio} must be >= 1 with >= 2 classes")));
                }
                let w: Vec<f64> = (0..n_classes)
                    .map(|i| ratio.powf(-(i as f64) / (n_classes - 1) as f64))
                    .collect();
                largest_remainder(*total, &w)
            }
        };
        if counts.len() != n_classes {
            return Err(Error::Config(format!("{} class counts for {n_classes} classes", counts.len())));
        }
        if counts.contains(&0) {
            return Err(Error::Config(format!("every class needs at least one image, got {counts:?}")));
        }
        Ok(counts)
    }
}

/// Splits `total` proportionally to `weights`, rounding by largest remainder
/// (ties to the lower index).
fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub classes: Vec<ClassSpec>,
    #[serde(default)]
    pub artifacts: ArtifactConfig,
    pub sizes: Sizes,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Background colour, RGB in `[0, 1]`.
    #[serde(default = "default_background")]
    pub background: [f64; 3],
    /// Per-pixel Gaussian noise, in `[0, 1]` units.
    #[serde(default = "default_noise")]
    pub noise_std: f64,
}

fn default_image_size() -> usize {
    32
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_background() -> [f64; 3] {
    [0.80, 0.77, 0.72]
}
fn default_noise() -> f64 {
    0.01
}

impl DatasetConfig {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_classes();
        if k < 2 {
            return Err(Error::Config("a dataset needs at least 2 classes".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config(format!("image_size {} below 8", self.image_size)));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!("test_fraction {} outside [0, 1)", self.test_fraction)));
        }
        if !(0.0..=0.5).contains(&self.noise_std) {
            return Err(Error::Config(format!("noise_std {} outside [0, 0.5]", self.noise_std)));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config("background colour components must lie in [0, 1]".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            let [h0, h1] = c.hue_range;
            let [s0, s1] = c.size_range;
            if !(h0.is_finite() && h1.is_finite() && h0 <= h1) {
                return Err(Error::Config(format!("class {i}: invalid hue range {:?}", c.hue_range)));
            }
            if !(0.0 < s0 && s0 <= s1 && s1 <= 0.45) {
                return Err(Error::Config(format!("class {i}: size range {:?} outside (0, 0.45]", c.size_range)));
            }
        }
        self.artifacts.validate(k)?;
        self.sizes.counts(k).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub id: usize,
    pub label: usize,
    pub split: Split,
    /// `3 × S × S`, values in `[-1, 1]`.
    pub pixels: Tensor,
    pub artifacts: ArtifactRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub image_size: usize,
    pub n_classes: usize,
    /// Ordered by image id.
    pub images: Vec<LabeledImage>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&LabeledImage> {
        self.images.iter().filter(|im| im.split == split).collect()
    }

    pub fn train(&self) -> Vec<&LabeledImage> {
        self.split(Split::Train)
    }

    pub fn test(&self) -> Vec<&LabeledImage> {
        self.split(Split::Test)
    }

    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for im in self.images.iter().filter(|im| im.split == split) {
            counts[im.label] += 1;
        }
        counts
    }

    /// Stacks images into an `N × 3 × S × S` batch.
    pub fn batch(images: &[&LabeledImage]) -> Result<Tensor> {
        let items: Vec<Tensor> = images
            .iter()
            .map(|im| {
                let mut shape = vec![1];
                shape.extend_from_slice(im.pixels.shape());
                im.pixels.clone().reshape(shape)
            })
            .collect::<Result<_>>()?;
        Tensor::concat_batch(&items.iter().collect::<Vec<_>>())
    }
}

fn sample_range(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn maybe_inject(rng: &mut impl Rng, probability: &[f64], intensity: [f64; 2], label: usize) -> Option<f64> {
    // Both draws always happen so the stream stays aligned across configs.
    let u: f64 = rng.random();
    let level = sample_range(rng, intensity);
    let p = probability.get(label).copied().unwrap_or(0.0);
    (u < p).then_some(level)
}

/// Renders one image from its own seed.
pub fn render_image(cfg: &DatasetConfig, label: usize, image_seed: u64) -> Result<(Tensor, ArtifactRecord)> {
    let spec = cfg
        .classes
        .get(label)
        .ok_or_else(|| Error::domain("render_image", format!("label {label} out of range")))?;
    let s = cfg.image_size;
    let mut rng = seed::rng(image_seed);
    let hue = sample_range(&mut rng, spec.hue_range);
    let sat = rng.random_range(0.55..0.9);
    let val = rng.random_range(0.6..0.95);
    let sf = s as f64;
    let jitter = sf / 32.0;
    let obj = Object {
        center: (
            sf / 2.0 + rng.random_range(-jitter..=jitter),
            sf / 2.0 + rng.random_range(-jitter..=jitter),
        ),
        radius: sample_range(&mut rng, spec.size_range) * sf,
        color: hsv_to_rgb(hue, sat, val),
        shape: spec.shape,
        texture: spec.texture,
        harmonics: [(); 3].map(|_| (rng.random_range(0.0..0.06), rng.random_range(0.0..std::f64::consts::TAU))),
        stripe_angle: rng.random_range(0.0..std::f64::consts::PI),
        stripe_period: sf / rng.random_range(6.0..9.0),
    };
    let bg_shift = rng.random_range(-0.04..0.04);
    let mut canvas = Canvas::filled(s, cfg.background.map(|c| (c + bg_shift).clamp(0.0, 1.0)));
    let mask = render::draw(&mut canvas, &obj, &mut rng);

    let a = &cfg.artifacts;
    let record = ArtifactRecord {
        tint: maybe_inject(&mut rng, &a.background_tint.probability, a.background_tint.intensity, label),
        vignette: maybe_inject(&mut rng, &a.vignette.probability, a.vignette.intensity, label),
        scalebar: maybe_inject(&mut rng, &a.scalebar.probability, a.scalebar.intensity, label),
    };
    if let Some(t) = record.tint {
        artifacts::apply_tint(&mut canvas, &mask, a.background_tint.hue, t);
    }
    if let Some(v) = record.vignette {
        artifacts::apply_vignette(&mut canvas, v);
    }
    if let Some(b) = record.scalebar {
        artifacts::apply_scalebar(&mut canvas, b);
    }
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let data = canvas
        .rgb
        .iter()
        .map(|&v| {
            let n = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            ((v + n).clamp(0.0, 1.0) * 2.0 - 1.0) as f32
        })
        .collect();
    Ok((Tensor::new([3, s, s], data)?, record))
}

/// Generates the full dataset. Image `i` depends only on `(seed, i)` and
/// its label; the split is stratified per class.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let counts = cfg.sizes.counts(cfg.n_classes())?;
    let image_root = seed::derive(seed, "image");
    let split_root = seed::derive(seed, "split");
    let mut images = Vec::with_capacity(counts.iter().sum());
    for (label, &n) in counts.iter().enumerate() {
        let first = images.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(seed::derive_index(split_root, label as u64)));
        let n_test = (n as f64 * cfg.test_fraction).round() as usize;
        let mut split = vec![Split::Train; n];
        for &i in &order[..n_test] {
            split[i] = Split::Test;
        }
        for (offset, split) in split.into_iter().enumerate() {
            let id = first + offset;
            let (pixels, artifacts) = render_image(cfg, label, seed::derive_index(image_root, id as u64))?;
            images.push(LabeledImage {
                id,
                label,
                split,
                pixels,
                artifacts,
            });
        }
    }
    Ok(Dataset {
        image_size: cfg.image_size,
        n_classes: cfg.n_classes(),
        images,
    })
}

/// Hue (degrees) of the mean colour of saturated pixels, if any. The
/// reference "oracle" feature for class separability checks.
pub fn dominant_hue(image: &Tensor) -> Option<f64> {
    let plane = image.len() / 3;
    let d = image.data();
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for i in 0..plane {
        let rgb = [0, 1, 2].map(|c| (f64::from(d[c * plane + i]) + 1.0) / 2.0);
        if rgb_to_hsv(rgb).1 > 0.3 {
            for c in 0..3 {
                sum[c] += rgb[c];
            }
            n += 1;
        }
    }
    (n > 0).then(|| rgb_to_hsv(sum.map(|s| s / n as f64)).0)
}

/// One manifest row; the manifest is the source of truth for metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_id: usize,
    pub split: Split,
    pub label: usize,
    pub vignette: u8,
    pub scalebar: u8,
    pub tint: u8,
    pub vignette_intensity: f64,
    pub scalebar_intensity: f64,
    pub tint_intensity: f64,
}

impl From<&LabeledImage> for ManifestRow {
    fn from(im: &LabeledImage) -> Self {
        let a = im.artifacts;
        ManifestRow {
            image_id: im.id,
            split: im.split,
            label: im.label,
            vignette: a.vignette.is_some() as u8,
            scalebar: a.scalebar.is_some() as u8,
            tint: a.tint.is_some() as u8,
            vignette_intensity: a.vignette.unwrap_or(0.0),
            scalebar_intensity: a.scalebar.unwrap_or(0.0),
            tint_intensity: a.tint.unwrap_or(0.0),
        }
    }
}

impl ManifestRow {
    pub fn artifacts(&self) -> ArtifactRecord {
        let pick = |flag: u8, v: f64| (flag != 0).then_some(v);
        ArtifactRecord {
            vignette: pick(self.vignette, self.vignette_intensity),
            scalebar: pick(self.scalebar, self.scalebar_intensity),
            tint: pick(self.tint, self.tint_intensity),
        }
    }
}
