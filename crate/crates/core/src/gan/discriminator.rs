use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{conv, norm, Bound, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// PatchGAN discriminator: strided 4×4 convolutions down to a grid of
/// real/fake scores, optionally with a K-way class head on the same trunk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub image_size: usize,
    pub base_channels: usize,
    pub n_downsamples: usize,
    pub with_class_head: bool,
    /// Width of the class head; ignored without one.
    pub n_classes: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            image_size: 32,
            base_channels: 32,
            n_downsamples: 3,
            with_class_head: false,
            n_classes: 1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_downsamples == 0 || self.base_channels == 0 {
            return Err(Error::Config("discriminator needs positive n_downsamples and base_channels".into()));
        }
        let factor = 1usize << self.n_downsamples;
        if self.image_size == 0 || !self.image_size.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "discriminator image_size {} must be a positive multiple of {factor}",
                self.image_size
            )));
        }
        if self.with_class_head && self.n_classes < 2 {
            return Err(Error::Config("a class head needs at least 2 classes".into()));
        }
        Ok(())
    }

    /// Side length of the patch score map.
    pub fn patch_extent(&self) -> usize {
        self.image_size >> self.n_downsamples
    }

    fn channels(&self, layer: usize) -> usize {
        self.base_channels << layer
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamSet,
}

/// Discriminator outputs for a batch.
#[derive(Clone, Copy, Debug)]
pub struct Judgement {
    /// `N × 1 × P × P` real/fake scores.
    pub patches: Var,
    /// `N × K` class logits when the class head is present.
    pub logits: Option<Var>,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut p = ParamSet::new();
        let mut cin = 3;
        for i in 0..config.n_downsamples {
            let cout = config.channels(i);
            p.add_conv(&format!("down{i}"), [cout, cin, 4, 4], i == 0, rng);
            if i > 0 {
                p.add_norm(&format!("down{i}.norm"), cout);
            }
            cin = cout;
        }
        p.add_conv("patch", [1, cin, 3, 3], true, rng);
        if config.with_class_head {
            let e = config.patch_extent();
            p.add_conv("cls", [config.n_classes, cin, e, e], false, rng);
        }
        Ok(Discriminator { config, params: p })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Judgement> {
        let shape = tape.value(x).shape().to_vec();
        let s = self.config.image_size;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(Error::shape(
                "discriminator",
                format!("expected N x 3 x {s} x {s} input, got {shape:?}"),
            ));
        }
        let n = shape[0];
        let mut h = x;
        for i in 0..self.config.n_downsamples {
            h = conv(tape, p, &format!("down{i}"), h, 2, 1)?;
            if i > 0 {
                h = norm(tape, p, &format!("down{i}.norm"), h)?;
            }
            h = tape.leaky_relu(h, 0.2)?;
        }
        let patches = conv(tape, p, "patch", h, 1, 1)?;
        let logits = if self.config.with_class_head {
            let l = conv(tape, p, "cls", h, 1, 0)?;
            Some(tape.reshape(l, &[n, self.config.n_classes])?)
        } else {
            None
        };
        Ok(Judgement { patches, logits })
    }
}
