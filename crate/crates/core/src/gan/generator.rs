use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::params::{conv, conv_t, norm, Bound, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Encoder → residual blocks → decoder translation network with a tanh head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub base_channels: usize,
    pub n_residual_blocks: usize,
    /// Dropout between the two convolutions of each residual block; only
    /// active in training mode. `0` disables it.
    pub dropout_rate: f64,
    /// 1 for an unconditional CycleGAN generator, K for a StarGAN generator
    /// conditioned on K one-hot label planes.
    pub n_classes: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            image_size: 32,
            base_channels: 32,
            n_residual_blocks: 3,
            dropout_rate: 0.5,
            n_classes: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "generator image_size {} must be a positive multiple of 4",
                self.image_size
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("generator base_channels must be positive".into()));
        }
        if self.n_residual_blocks == 0 {
            return Err(Error::Config("generator needs at least one residual block".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.n_classes == 0 {
            return Err(Error::Config("generator n_classes must be at least 1".into()));
        }
        Ok(())
    }

    /// Image channels plus one label plane per class when conditioned.
    pub fn input_channels(&self) -> usize {
        if self.n_classes > 1 {
            3 + self.n_classes
        } else {
            3
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamSet,
}

impl Generator {
    pub fn new(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let b = config.base_channels;
        let mut p = ParamSet::new();
        p.add_conv("enc0", [b, config.input_channels(), 7, 7], false, rng);
        p.add_norm("enc0.norm", b);
        p.add_conv("enc1", [2 * b, b, 3, 3], false, rng);
        p.add_norm("enc1.norm", 2 * b);
        p.add_conv("enc2", [4 * b, 2 * b, 3, 3], false, rng);
        p.add_norm("enc2.norm", 4 * b);
        for i in 0..config.n_residual_blocks {
            for j in 0..2 {
                p.add_conv(&format!("res{i}.conv{j}"), [4 * b, 4 * b, 3, 3], false, rng);
                p.add_norm(&format!("res{i}.norm{j}"), 4 * b);
            }
        }
        p.add_conv_t("dec0", [4 * b, 2 * b, 4, 4], rng);
        p.add_norm("dec0.norm", 2 * b);
        p.add_conv_t("dec1", [2 * b, b, 4, 4], rng);
        p.add_norm("dec1.norm", b);
        p.add_conv("out", [3, b, 7, 7], true, rng);
        Ok(Generator { config, params: p })
    }

    /// Runs the network on `x` (`N × input_channels × S × S`). Passing a
    /// dropout rng selects training mode; `None` is inference mode.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, mut train_rng: Option<&mut dyn RngCore>) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        let s = self.config.image_size;
        if shape.len() != 4 || shape[1] != self.config.input_channels() || shape[2] != s || shape[3] != s {
            return Err(Error::shape(
                "generator",
                format!(
                    "expected N x {} x {s} x {s} input, got {shape:?}",
                    self.config.input_channels()
                ),
            ));
        }
        let mut h = conv(tape, p, "enc0", x, 1, 3)?;
        h = norm(tape, p, "enc0.norm", h)?;
        h = tape.relu(h)?;
        for (name, stride) in [("enc1", 2), ("enc2", 2)] {
            h = conv(tape, p, name, h, stride, 1)?;
            h = norm(tape, p, &format!("{name}.norm"), h)?;
            h = tape.relu(h)?;
        }
        for i in 0..self.config.n_residual_blocks {
            let mut r = conv(tape, p, &format!("res{i}.conv0"), h, 1, 1)?;
            r = norm(tape, p, &format!("res{i}.norm0"), r)?;
            r = tape.relu(r)?;
            if let Some(rng) = train_rng.as_deref_mut() {
                r = dropout(tape, r, self.config.dropout_rate, rng)?;
            }
            r = conv(tape, p, &format!("res{i}.conv1"), r, 1, 1)?;
            r = norm(tape, p, &format!("res{i}.norm1"), r)?;
            h = tape.add(h, r)?;
        }
        for name in ["dec0", "dec1"] {
            h = conv_t(tape, p, name, h, 2, 1)?;
            h = norm(tape, p, &format!("{name}.norm"), h)?;
            h = tape.relu(h)?;
        }
        h = conv(tape, p, "out", h, 1, 3)?;
        tape.tanh(h)
    }

    /// Inference-mode forward pass on a batch of (already conditioned) inputs.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false)?;
        let x = tape.constant(input.clone())?;
        let y = self.forward(&mut tape, &p, x, None)?;
        Ok(tape.value(y).clone())
    }
}

/// Inverted dropout: zeroes each element with probability `rate` and scales
/// survivors by `1 / (1 - rate)`.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut dyn RngCore) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = (1.0 / (1.0 - rate)) as f32;
    let shape = tape.value(x).shape().to_vec();
    let mask = Tensor::from_fn(shape, |_| if rng.random::<f64>() < rate { 0.0 } else { keep });
    let m = tape.constant(mask)?;
    tape.mul(x, m)
}
