//! Multi-iteration GAN training with resumable checkpoints.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::classify::WeightedSampler;
use crate::error::{Error, Result};
use crate::gan::{
    build_cyclegan, build_stargan, train_step_cyclegan, train_step_stargan, CycleGan, CycleGanOptim,
    DiscriminatorConfig, GeneratorConfig, LossRecord, LossWeights, ParamSet, StarGan, StarGanOptim,
};
use crate::seed;
use crate::synth::{augment, AugmentConfig, Dataset, LabeledImage};
use crate::tensor::{AdamConfig, AdamState, Moments, Tensor};
use crate::translate::ClassTranslator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanKind {
    CycleGan,
    StarGan,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorShape {
    pub base_channels: usize,
    pub n_residual_blocks: usize,
    pub dropout_rate: f64,
}

impl Default for GeneratorShape {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        GeneratorShape {
            base_channels: g.base_channels,
            n_residual_blocks: g.n_residual_blocks,
            dropout_rate: g.dropout_rate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorShape {
    pub base_channels: usize,
    pub n_downsamples: usize,
}

impl Default for DiscriminatorShape {
    fn default() -> Self {
        let d = DiscriminatorConfig::default();
        DiscriminatorShape {
            base_channels: d.base_channels,
            n_downsamples: d.n_downsamples,
        }
    }
}

/// Model and training-schedule settings. Image size and class count come
/// from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: GanKind,
    #[serde(default)]
    pub generator: GeneratorShape,
    #[serde(default)]
    pub discriminator: DiscriminatorShape,
    pub weights: LossWeights,
    #[serde(default)]
    pub adam: AdamConfig,
    pub iterations: usize,
    pub batch_size: usize,
    /// Write a resumable checkpoint every this many iterations (0: never).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Log losses every this many iterations; the last one is always logged.
    #[serde(default = "ten")]
    pub log_every: usize,
    #[serde(default = "AugmentConfig::none")]
    pub augment: AugmentConfig,
}

fn ten() -> usize {
    10
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.augment.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        Ok(())
    }

    pub fn generator_config(&self, n_classes: usize, image_size: usize) -> GeneratorConfig {
        GeneratorConfig {
            image_size,
            base_channels: self.generator.base_channels,
            n_residual_blocks: self.generator.n_residual_blocks,
            dropout_rate: self.generator.dropout_rate,
            n_classes: match self.kind {
                GanKind::CycleGan => 1,
                GanKind::StarGan => n_classes,
            },
        }
    }

    pub fn discriminator_config(&self, n_classes: usize, image_size: usize) -> DiscriminatorConfig {
        let star = self.kind == GanKind::StarGan;
        DiscriminatorConfig {
            image_size,
            base_channels: self.discriminator.base_channels,
            n_downsamples: self.discriminator.n_downsamples,
            with_class_head: star,
            n_classes: if star { n_classes } else { 1 },
        }
    }

    /// Canonical description of everything that fixes the parameter layout
    /// and the meaning of the weights; stored in checkpoints.
    pub fn fingerprint(&self, n_classes: usize, image_size: usize) -> String {
        serde_json::json!({
            "artifact": "gan",
            "kind": self.kind,
            "adversarial": "least_squares",
            "generator": self.generator_config(n_classes, image_size),
            "discriminator": self.discriminator_config(n_classes, image_size),
            "weights": self.weights,
        })
        .to_string()
    }
}

#[derive(Clone, Debug)]
pub enum Gan {
    Cycle(CycleGan, CycleGanOptim),
    Star(StarGan, StarGanOptim),
}

/// A GAN with its optimizers and iteration counter.
#[derive(Clone, Debug)]
pub struct GanTrainer {
    pub config: ModelConfig,
    pub n_classes: usize,
    pub image_size: usize,
    pub gan: Gan,
    /// Completed iterations.
    pub iteration: usize,
}

/// Train-split images grouped for sampling.
pub struct TrainPool<'a> {
    images: Vec<&'a LabeledImage>,
    by_class: Vec<Vec<usize>>,
    sampler: WeightedSampler,
}

impl<'a> TrainPool<'a> {
    pub fn new(images: Vec<&'a LabeledImage>, n_classes: usize) -> Result<Self> {
        let mut by_class = vec![Vec::new(); n_classes];
        for (i, im) in images.iter().enumerate() {
            by_class
                .get_mut(im.label)
                .ok_or_else(|| Error::domain("TrainPool", format!("label {} out of range", im.label)))?
                .push(i);
        }
        if let Some(k) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::domain("TrainPool", format!("class {k} has no training images")));
        }
        let labels: Vec<usize> = images.iter().map(|im| im.label).collect();
        Ok(TrainPool {
            sampler: WeightedSampler::from_labels(&labels)?,
            images,
            by_class,
        })
    }

    fn draw(&self, idx: &[usize], cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<(Tensor, Vec<usize>)> {
        let mut parts = Vec::with_capacity(idx.len());
        for &i in idx {
            let im = self.images[i];
            let mut shape = vec![1];
            shape.extend_from_slice(im.pixels.shape());
            parts.push(augment(&im.pixels, cfg, rng).reshape(shape)?);
        }
        let labels = idx.iter().map(|&i| self.images[i].label).collect();
        Ok((Tensor::concat_batch(&parts.iter().collect::<Vec<_>>())?, labels))
    }

    /// `n` uniform draws with replacement from class `k`.
    fn class_batch(&self, k: usize, n: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Tensor> {
        let pool = &self.by_class[k];
        let idx: Vec<usize> = (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        Ok(self.draw(&idx, cfg, rng)?.0)
    }

    /// `n` class-balanced draws with replacement.
    fn balanced_batch(&self, n: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<(Tensor, Vec<usize>)> {
        let idx: Vec<usize> = (0..n).map(|_| self.sampler.sample(rng)).collect();
        self.draw(&idx, cfg, rng)
    }
}

impl GanTrainer {
    pub fn new(config: ModelConfig, n_classes: usize, image_size: usize, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let g = config.generator_config(n_classes, image_size);
        let d = config.discriminator_config(n_classes, image_size);
        let gan = match config.kind {
            GanKind::CycleGan => {
                if n_classes != 2 {
                    return Err(Error::Config(format!("CycleGAN needs exactly 2 classes, dataset has {n_classes}")));
                }
                Gan::Cycle(build_cyclegan(g, d, init_seed)?, CycleGanOptim::new(config.adam))
            }
            GanKind::StarGan => Gan::Star(build_stargan(g, d, init_seed)?, StarGanOptim::new(config.adam)),
        };
        Ok(GanTrainer {
            config,
            n_classes,
            image_size,
            gan,
            iteration: 0,
        })
    }

    pub fn fingerprint(&self) -> String {
        self.config.fingerprint(self.n_classes, self.image_size)
    }

    pub fn translator(&self) -> &dyn ClassTranslator {
        match &self.gan {
            Gan::Cycle(m, _) => m,
            Gan::Star(m, _) => m,
        }
    }

    /// Runs iteration `self.iteration` and advances the counter. All of its
    /// randomness comes from `(train_seed, iteration)`, so an interrupted run
    /// resumed from a checkpoint continues identically.
    pub fn step(&mut self, pool: &TrainPool<'_>, train_seed: u64) -> Result<LossRecord> {
        let mut rng = seed::rng(seed::derive_index(train_seed, self.iteration as u64));
        let n = self.config.batch_size;
        let aug = self.config.augment;
        let weights = self.config.weights;
        let record = match &mut self.gan {
            Gan::Cycle(m, opt) => {
                let a = pool.class_batch(0, n, &aug, &mut rng)?;
                let b = pool.class_batch(1, n, &aug, &mut rng)?;
                train_step_cyclegan(&a, &b, m, opt, &weights, &mut rng)?
            }
            Gan::Star(m, opt) => {
                let (batch, labels) = pool.balanced_batch(n, &aug, &mut rng)?;
                let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.n_classes)).collect();
                train_step_stargan(&batch, &labels, &targets, m, opt, &weights, &mut rng)?
            }
        };
        if !record.all_finite() {
            return Err(Error::NonFinite { op: "training step" });
        }
        self.iteration += 1;
        Ok(record)
    }

    fn nets(&self) -> Vec<(&'static str, &ParamSet)> {
        match &self.gan {
            Gan::Cycle(m, _) => vec![
                ("g_ab", &m.g_ab.params),
                ("g_ba", &m.g_ba.params),
                ("d_a", &m.d_a.params),
                ("d_b", &m.d_b.params),
            ],
            Gan::Star(m, _) => vec![("g", &m.g.params), ("d", &m.d.params)],
        }
    }

    fn optims(&self) -> Vec<(&'static str, &AdamState)> {
        match &self.gan {
            Gan::Cycle(_, o) => vec![("g", &o.g), ("d", &o.d)],
            Gan::Star(_, o) => vec![("g", &o.g), ("d", &o.d)],
        }
    }

    /// Parameters, optimizer moments and counters. Tensor names:
    /// `net.<network>.<param>`, `adam.<g|d>.<m|v>.<key>`, `adam.<g|d>.t`,
    /// `state.iteration`.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.fingerprint());
        for (net, params) in self.nets() {
            for (name, t) in params.iter() {
                ck.insert(format!("net.{net}.{name}"), t.clone());
            }
        }
        for (which, opt) in self.optims() {
            ck.insert(format!("adam.{which}.t"), counter(opt.t())?);
            for (key, m) in opt.moments() {
                ck.insert(format!("adam.{which}.m.{key}"), m.first.clone());
                ck.insert(format!("adam.{which}.v.{key}"), m.second.clone());
            }
        }
        ck.insert("state.iteration", counter(self.iteration as u64)?);
        Ok(ck)
    }

    /// Rebuilds a trainer from a checkpoint written with the same model
    /// configuration.
    pub fn from_checkpoint(config: ModelConfig, n_classes: usize, image_size: usize, mut ck: Checkpoint) -> Result<Self> {
        let mut t = GanTrainer::new(config, n_classes, image_size, 0)?;
        if ck.fingerprint != t.fingerprint() {
            return Err(Error::format(
                "checkpoint",
                "<checkpoint>",
                format!("fingerprint mismatch: file has {}, expected {}", ck.fingerprint, t.fingerprint()),
            ));
        }
        let iteration = read_counter(&ck, "state.iteration")? as usize;
        let adam = t.config.adam;
        let restore = |ck: &mut Checkpoint, which: &str| -> Result<AdamState> {
            let steps = read_counter(ck, &format!("adam.{which}.t"))?;
            let firsts = ck.take_prefixed(&format!("adam.{which}.m."));
            let mut seconds = ck.take_prefixed(&format!("adam.{which}.v."));
            let mut moments = BTreeMap::new();
            for (key, first) in firsts {
                let second = seconds
                    .remove(&key)
                    .ok_or_else(|| Error::format("checkpoint", "<checkpoint>", format!("no second moment for {key}")))?;
                moments.insert(key, Moments { first, second });
            }
            Ok(AdamState::restore(adam, steps, moments))
        };
        let (g_opt, d_opt) = (restore(&mut ck, "g")?, restore(&mut ck, "d")?);
        let mut load = |net: &str, target: &mut ParamSet| -> Result<()> {
            let loaded = ParamSet::from_map(ck.take_prefixed(&format!("net.{net}.")));
            target.check_layout(&loaded, net)?;
            *target = loaded;
            Ok(())
        };
        match &mut t.gan {
            Gan::Cycle(m, o) => {
                load("g_ab", &mut m.g_ab.params)?;
                load("g_ba", &mut m.g_ba.params)?;
                load("d_a", &mut m.d_a.params)?;
                load("d_b", &mut m.d_b.params)?;
                *o = CycleGanOptim { g: g_opt, d: d_opt };
            }
            Gan::Star(m, o) => {
                load("g", &mut m.g.params)?;
                load("d", &mut m.d.params)?;
                *o = StarGanOptim { g: g_opt, d: d_opt };
            }
        }
        t.iteration = iteration;
        Ok(t)
    }
}

/// Counters are stored as exact `f32` scalars.
fn counter(v: u64) -> Result<Tensor> {
    if v > 1 << f32::MANTISSA_DIGITS {
        return Err(Error::domain("checkpoint", format!("counter {v} not exactly representable")));
    }
    Ok(Tensor::scalar(v as f32))
}

fn read_counter(ck: &Checkpoint, name: &str) -> Result<u64> {
    let v = ck.get(name)?.item()?;
    if !(v >= 0.0 && v.fract() == 0.0) {
        return Err(Error::format("checkpoint", "<checkpoint>", format!("{name} is not a counter")));
    }
    Ok(v as u64)
}

/// Convenience wrapper: trains a fresh model on the train split of `data`
/// for `config.iterations` iterations, calling `on_step` after each one.
pub fn train_gan(
    config: &ModelConfig,
    data: &Dataset,
    init_seed: u64,
    train_seed: u64,
    mut on_step: impl FnMut(&GanTrainer, &LossRecord) -> Result<()>,
) -> Result<GanTrainer> {
    let mut t = GanTrainer::new(config.clone(), data.n_classes, data.image_size, init_seed)?;
    let pool = TrainPool::new(data.train(), data.n_classes)?;
    while t.iteration < config.iterations {
        let rec = t.step(&pool, train_seed)?;
        on_step(&t, &rec)?;
    }
    Ok(t)
}
