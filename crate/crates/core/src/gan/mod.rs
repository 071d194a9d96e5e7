//! Toy-scale CycleGAN and StarGAN translation networks.

mod cyclegan;
mod discriminator;
mod generator;
mod losses;
pub(crate) mod params;
mod stargan;

pub use cyclegan::{build_cyclegan, train_step_cyclegan, CycleGan, CycleGanOptim};
pub use discriminator::{Discriminator, DiscriminatorConfig, Judgement};
pub use generator::{dropout, Generator, GeneratorConfig};
pub use losses::{
    absolute_error, adversarial_loss, classification_loss, cycle_loss, identity_loss, LossWeights, Reduction, Target,
};
pub use params::{Bound, ParamSet, INIT_STD};
pub use stargan::{build_stargan, condition, condition_each, train_step_stargan, StarGan, StarGanOptim};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named loss components of one training iteration, in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossRecord {
    entries: Vec<(&'static str, f64)>,
}

impl LossRecord {
    pub(crate) fn push(&mut self, name: &'static str, value: f64) {
        self.entries.push((name, value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.iter().map(|&(n, _)| n)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, v)| v.is_finite())
    }
}

/// Checks that a batch is `N × 3 × S × S` with `N ≥ 1`.
pub(crate) fn check_batch(op: &'static str, batch: &Tensor, image_size: usize) -> Result<usize> {
    match batch.shape() {
        &[n, 3, h, w] if n > 0 && h == image_size && w == image_size => Ok(n),
        s => Err(Error::shape(
            op,
            format!("expected N x 3 x {image_size} x {image_size} batch, got {s:?}"),
        )),
    }
}
