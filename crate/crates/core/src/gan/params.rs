use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{AdamState, Tape, Tensor, Var};

/// Standard deviation of the zero-mean normal used for conv weights.
pub const INIT_STD: f64 = 0.02;

/// Named parameter tensors of one network, kept in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Normal(0, 0.02) conv weight plus an optional zero bias.
    pub(crate) fn add_conv(&mut self, name: &str, shape: [usize; 4], bias: bool, rng: &mut impl Rng) {
        let normal = Normal::new(0.0f32, INIT_STD as f32).expect("valid normal");
        self.insert(format!("{name}.w"), Tensor::from_fn(shape, |_| normal.sample(rng)));
        if bias {
            self.insert(format!("{name}.b"), Tensor::zeros([shape[0]]));
        }
    }

    /// Normal(0, 0.02) transposed-conv weight laid out `[in, out, kh, kw]`.
    pub(crate) fn add_conv_t(&mut self, name: &str, shape: [usize; 4], rng: &mut impl Rng) {
        let normal = Normal::new(0.0f32, INIT_STD as f32).expect("valid normal");
        self.insert(format!("{name}.w"), Tensor::from_fn(shape, |_| normal.sample(rng)));
    }

    /// Instance-norm affine parameters: gamma = 1, beta = 0.
    pub(crate) fn add_norm(&mut self, name: &str, channels: usize) {
        self.insert(format!("{name}.gamma"), Tensor::full([channels], 1.0));
        self.insert(format!("{name}.beta"), Tensor::zeros([channels]));
    }

    /// Puts every tensor on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Bound> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.tensors {
            vars.insert(name.clone(), tape.leaf(t.clone(), trainable)?);
        }
        Ok(Bound { vars })
    }

    /// Applies one Adam step using the gradients accumulated on `tape`.
    /// Optimizer keys are `prefix` + parameter name so one optimizer can
    /// drive several networks.
    pub fn adam_step(&mut self, tape: &Tape, bound: &Bound, opt: &mut AdamState, prefix: &str) -> Result<()> {
        let grads: Vec<(String, Tensor)> = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let g = tape
                    .grad(bound.var(name)?)
                    .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
                Ok((format!("{prefix}{name}"), g))
            })
            .collect::<Result<_>>()?;
        opt.step(
            self.tensors
                .values_mut()
                .zip(&grads)
                .map(|(p, (key, g))| (key.as_str(), p, g)),
        )
    }

    /// Joint Adam step over several networks sharing one optimizer.
    pub fn adam_step_joint(nets: &mut [(&mut ParamSet, &Bound, &str)], tape: &Tape, opt: &mut AdamState) -> Result<()> {
        let mut grads = Vec::new();
        for (set, bound, prefix) in nets.iter() {
            for (name, t) in &set.tensors {
                let g = tape
                    .grad(bound.var(name)?)
                    .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
                grads.push((format!("{prefix}{name}"), g));
            }
        }
        let params = nets.iter_mut().flat_map(|(set, _, _)| set.tensors.values_mut());
        opt.step(params.zip(&grads).map(|(p, (key, g))| (key.as_str(), p, g)))
    }

    pub(crate) fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        ParamSet { tensors }
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub(crate) fn check_layout(&self, other: &ParamSet, what: &str) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Config(format!(
                "{what}: expected {} parameter tensors, found {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (name, t) in &self.tensors {
            match other.tensors.get(name) {
                Some(o) if o.shape() == t.shape() => {}
                Some(o) => {
                    return Err(Error::Config(format!(
                        "{what}: parameter {name} has shape {:?}, expected {:?}",
                        o.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Config(format!("{what}: missing parameter {name}"))),
            }
        }
        Ok(())
    }
}

/// Tape handles of a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract("Bound::var", format!("no parameter named {name}")))
    }

    pub fn maybe(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }
}

/// Shared layer helpers over bound parameters.
pub(crate) fn conv(tape: &mut Tape, p: &Bound, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let w = p.var(&format!("{name}.w"))?;
    tape.conv2d(x, w, p.maybe(&format!("{name}.b")), stride, pad)
}

pub(crate) fn conv_t(tape: &mut Tape, p: &Bound, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let w = p.var(&format!("{name}.w"))?;
    tape.conv_transpose2d(x, w, p.maybe(&format!("{name}.b")), stride, pad)
}

pub(crate) const NORM_EPS: f64 = 1e-5;

pub(crate) fn norm(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let g = p.var(&format!("{name}.gamma"))?;
    let b = p.var(&format!("{name}.beta"))?;
    tape.instance_norm(x, g, b, NORM_EPS)
}
