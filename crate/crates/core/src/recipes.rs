//! Built-in dataset recipes mirroring the four experiment shapes.

use crate::baseline::BaselineConfig;
use crate::classify::{ClassifierConfig, ClassifierKind};
use crate::config::{ExperimentConfig, ExtractConfig, GridConfig};
use crate::error::{Error, Result};
use crate::gan::{LossWeights, Reduction};
use crate::synth::{
    ArtifactConfig, ArtifactSpec, AugmentConfig, ClassSpec, DatasetConfig, ShapeKind, Sizes, Texture, TintSpec,
};
use crate::tensor::AdamConfig;
use crate::train::{DiscriminatorShape, GanKind, GeneratorShape, ModelConfig};

pub const RECIPES: [&str; 4] = ["fruits2", "fruits2-bias", "cells3", "cells6"];

fn class(hue: [f64; 2], texture: Texture, shape: ShapeKind, size: [f64; 2]) -> ClassSpec {
    ClassSpec {
        hue_range: hue,
        texture,
        shape,
        size_range: size,
    }
}

/// Red smooth "apples" (class A) versus orange speckled "oranges" (class B).
pub fn fruits2() -> DatasetConfig {
    DatasetConfig {
        classes: vec![
            class([350.0, 372.0], Texture::Smooth, ShapeKind::Disc, [0.22, 0.30]),
            class([24.0, 42.0], Texture::Speckled, ShapeKind::Disc, [0.22, 0.30]),
        ],
        artifacts: ArtifactConfig::default(),
        sizes: Sizes::PerClass(250),
        image_size: 32,
        test_fraction: 0.2,
        background: [0.80, 0.77, 0.72],
        noise_std: 0.01,
    }
}

/// `fruits2` with confounds skewed toward class B: vignetting 0.1 / 0.9,
/// scalebars 0.0 / 0.5 and a pink background tint 0.2 / 0.8.
pub fn fruits2_bias() -> DatasetConfig {
    DatasetConfig {
        artifacts: ArtifactConfig {
            vignette: ArtifactSpec {
                probability: vec![0.1, 0.9],
                intensity: [0.5, 0.8],
            },
            scalebar: ArtifactSpec {
                probability: vec![0.0, 0.5],
                intensity: [0.6, 0.9],
            },
            background_tint: TintSpec {
                probability: vec![0.2, 0.8],
                intensity: [0.15, 0.3],
                hue: 340.0,
            },
        },
        ..fruits2()
    }
}

fn cell_classes() -> Vec<ClassSpec> {
    vec![
        class([268.0, 288.0], Texture::Smooth, ShapeKind::Disc, [0.15, 0.22]),
        class([318.0, 338.0], Texture::Speckled, ShapeKind::Blob, [0.22, 0.30]),
        class([198.0, 218.0], Texture::Striped, ShapeKind::Disc, [0.28, 0.36]),
        class([238.0, 256.0], Texture::Speckled, ShapeKind::Disc, [0.17, 0.24]),
        class([294.0, 312.0], Texture::Striped, ShapeKind::Blob, [0.25, 0.32]),
        class([172.0, 190.0], Texture::Smooth, ShapeKind::Blob, [0.20, 0.28]),
    ]
}

/// Three stained "cell" morphologies differing in hue, texture, shape and size.
pub fn cells3() -> DatasetConfig {
    DatasetConfig {
        classes: cell_classes().into_iter().take(3).collect(),
        artifacts: ArtifactConfig::default(),
        sizes: Sizes::PerClass(250),
        image_size: 32,
        test_fraction: 0.2,
        background: [0.86, 0.81, 0.88],
        noise_std: 0.01,
    }
}

/// Six-class extension of `cells3`.
pub fn cells6() -> DatasetConfig {
    DatasetConfig {
        classes: cell_classes(),
        ..cells3()
    }
}

pub fn dataset(name: &str) -> Result<DatasetConfig> {
    match name {
        "fruits2" => Ok(fruits2()),
        "fruits2-bias" => Ok(fruits2_bias()),
        "cells3" => Ok(cells3()),
        "cells6" => Ok(cells6()),
        other => Err(Error::Config(format!("unknown recipe {other:?}; expected one of {RECIPES:?}"))),
    }
}

/// Two-class CycleGAN with identity loss and no cycle loss, errors averaged.
/// Two images per domain per step: batch 1 leaves the test AUROC of a
/// 2000-iteration run noticeably seed-dependent.
fn cyclegan_model() -> ModelConfig {
    ModelConfig {
        kind: GanKind::CycleGan,
        generator: GeneratorShape::default(),
        discriminator: DiscriminatorShape::default(),
        weights: LossWeights {
            lambda_identity: 5.0,
            lambda_cycle: 0.0,
            lambda_cls: 1.0,
            lambda_adv: 1.0,
            reduction: Reduction::Mean,
        },
        adam: AdamConfig::default(),
        iterations: 2000,
        batch_size: 2,
        checkpoint_every: 500,
        log_every: 10,
        augment: AugmentConfig::none(),
    }
}

/// Half-width StarGAN so multi-class runs stay within minutes on a CPU.
fn stargan_model(iterations: usize) -> ModelConfig {
    ModelConfig {
        kind: GanKind::StarGan,
        generator: GeneratorShape {
            base_channels: 16,
            ..GeneratorShape::default()
        },
        discriminator: DiscriminatorShape {
            base_channels: 16,
            ..DiscriminatorShape::default()
        },
        weights: LossWeights::stargan_default(),
        adam: AdamConfig::default(),
        iterations,
        batch_size: 4,
        checkpoint_every: 1000,
        log_every: 10,
        augment: AugmentConfig::none(),
    }
}

fn experiment_with(name: &str, dataset: DatasetConfig, model: ModelConfig, kind: ClassifierKind) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        seed: 1,
        output_dir: None,
        dataset,
        model,
        classifier: ClassifierConfig {
            kind,
            ..ClassifierConfig::default()
        },
        baseline: BaselineConfig::default(),
        extract: ExtractConfig::default(),
        grid: GridConfig::default(),
    }
}

/// Full experiment settings for a built-in recipe.
pub fn experiment(name: &str) -> Result<ExperimentConfig> {
    let data = dataset(name)?;
    Ok(match name {
        "fruits2" | "fruits2-bias" => experiment_with(name, data, cyclegan_model(), ClassifierKind::Argmin),
        "cells3" => experiment_with(name, data, stargan_model(4000), ClassifierKind::Logistic),
        _ => experiment_with(name, data, stargan_model(6000), ClassifierKind::Logistic),
    })
}
