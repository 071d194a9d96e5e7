use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// How an absolute-error image loss is reduced to a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Sum,
}

/// Weights of the translation losses. All must be non-negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_identity: f64,
    pub lambda_cycle: f64,
    #[serde(default = "one")]
    pub lambda_cls: f64,
    /// Weight of the generator's adversarial term. `0` turns the run into
    /// pure reconstruction training and skips discriminator updates.
    #[serde(default = "one")]
    pub lambda_adv: f64,
    pub reduction: Reduction,
}

fn one() -> f64 {
    1.0
}

impl LossWeights {
    /// λ_I = 5, λ_cycle = 10 with summed absolute errors.
    pub fn cyclegan_default() -> Self {
        LossWeights {
            lambda_identity: 5.0,
            lambda_cycle: 10.0,
            lambda_cls: 1.0,
            lambda_adv: 1.0,
            reduction: Reduction::Sum,
        }
    }

    /// λ_I = 0.001, reconstruction weight 10, classification weight 1 with
    /// mean absolute errors.
    pub fn stargan_default() -> Self {
        LossWeights {
            lambda_identity: 0.001,
            lambda_cycle: 10.0,
            lambda_cls: 1.0,
            lambda_adv: 1.0,
            reduction: Reduction::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_identity", self.lambda_identity),
            ("lambda_cycle", self.lambda_cycle),
            ("lambda_cls", self.lambda_cls),
            ("lambda_adv", self.lambda_adv),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Least-squares target for discriminator scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Real,
    Fake,
}

impl Target {
    fn value(self) -> f64 {
        match self {
            Target::Real => 1.0,
            Target::Fake => 0.0,
        }
    }
}

/// `mean((score − target)²)`.
pub fn adversarial_loss(tape: &mut Tape, scores: Var, target: Target) -> Result<Var> {
    let d = tape.add_scalar(scores, -target.value())?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}

/// `reduce(|a − b|)`.
pub fn absolute_error(tape: &mut Tape, a: Var, b: Var, reduction: Reduction) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let abs = tape.abs(d)?;
    match reduction {
        Reduction::Mean => tape.mean(abs),
        Reduction::Sum => tape.sum(abs),
    }
}

/// `λ_I · reduce(|x − G_own(x)|)` where `g_own_x` is the image translated
/// into its own class.
pub fn identity_loss(tape: &mut Tape, x: Var, g_own_x: Var, weights: &LossWeights) -> Result<Var> {
    let e = absolute_error(tape, x, g_own_x, weights.reduction)?;
    tape.scalar_mul(e, weights.lambda_identity)
}

/// `λ_cycle · reduce(|x − reconstructed|)`. With `λ_cycle = 0` the result is
/// an exact zero constant and `reconstruct` is never called.
pub fn cycle_loss<F>(tape: &mut Tape, x: Var, weights: &LossWeights, reconstruct: F) -> Result<Var>
where
    F: FnOnce(&mut Tape) -> Result<Var>,
{
    if weights.lambda_cycle == 0.0 {
        return tape.constant(Tensor::scalar(0.0));
    }
    let rec = reconstruct(tape)?;
    let e = absolute_error(tape, x, rec, weights.reduction)?;
    tape.scalar_mul(e, weights.lambda_cycle)
}

/// Mean softmax cross-entropy of `N × K` logits.
pub fn classification_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.softmax_cross_entropy(logits, labels, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(tape: &Tape, v: Var) -> f64 {
        tape.value(v).item().unwrap() as f64
    }

    #[test]
    fn adversarial_targets() {
        let mut tape = Tape::new();
        let ones = tape.constant(Tensor::full([1, 1, 4, 4], 1.0)).unwrap();
        let zeros = tape.constant(Tensor::zeros([1, 1, 4, 4])).unwrap();
        let half = tape.constant(Tensor::full([1], 0.5)).unwrap();
        let l = adversarial_loss(&mut tape, ones, Target::Real).unwrap();
        assert_eq!(scalar(&tape, l), 0.0);
        let l = adversarial_loss(&mut tape, zeros, Target::Real).unwrap();
        assert_eq!(scalar(&tape, l), 1.0);
        let l = adversarial_loss(&mut tape, half, Target::Fake).unwrap();
        assert_eq!(scalar(&tape, l), 0.25);
    }

    #[test]
    fn identity_loss_vanishes_on_unchanged_image_and_scales_with_reduction() {
        let x = Tensor::from_fn([1, 3, 4, 4], |i| (i as f32 * 0.37).sin());
        let y = Tensor::from_fn([1, 3, 4, 4], |i| (i as f32 * 0.11).cos() * 0.5);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone()).unwrap();
        let same = tape.constant(x).unwrap();
        let yv = tape.constant(y).unwrap();
        let mut w = LossWeights::cyclegan_default();
        let l = identity_loss(&mut tape, xv, same, &w).unwrap();
        assert_eq!(scalar(&tape, l), 0.0);

        w.reduction = Reduction::Mean;
        let mean = identity_loss(&mut tape, xv, yv, &w).unwrap();
        w.reduction = Reduction::Sum;
        let sum = identity_loss(&mut tape, xv, yv, &w).unwrap();
        let ratio = scalar(&tape, sum) / scalar(&tape, mean);
        assert!((ratio - 48.0).abs() < 1e-4, "ratio {ratio}");

        // Same residual under λ_I = 5 vs λ_I = 0.001.
        w.lambda_identity = 0.001;
        let small = identity_loss(&mut tape, xv, yv, &w).unwrap();
        let big = scalar(&tape, sum) / scalar(&tape, small);
        assert!((big - 5000.0).abs() < 0.05, "{big}");
    }

    #[test]
    fn cycle_loss_disabled_skips_reconstruction() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full([1, 3, 2, 2], 0.3)).unwrap();
        let w = LossWeights {
            lambda_cycle: 0.0,
            ..LossWeights::cyclegan_default()
        };
        let l = cycle_loss(&mut tape, x, &w, |_| panic!("reconstruction must not run")).unwrap();
        assert_eq!(scalar(&tape, l), 0.0);

        let w = LossWeights::cyclegan_default();
        let l = cycle_loss(&mut tape, x, &w, |t| t.constant(Tensor::full([1, 3, 2, 2], 0.3))).unwrap();
        assert_eq!(scalar(&tape, l), 0.0);
    }

    #[test]
    fn classification_loss_closed_forms() {
        let mut tape = Tape::new();
        let uniform3 = tape.constant(Tensor::zeros([1, 3])).unwrap();
        let l = classification_loss(&mut tape, uniform3, &[2]).unwrap();
        assert!((scalar(&tape, l) - 3f64.ln()).abs() < 1e-6);
        let uniform6 = tape.constant(Tensor::full([2, 6], 0.7)).unwrap();
        let l = classification_loss(&mut tape, uniform6, &[0, 5]).unwrap();
        assert!((scalar(&tape, l) - 6f64.ln()).abs() < 1e-6);
        let sharp = tape.constant(Tensor::new([1, 3], vec![0.0, 1000.0, 0.0]).unwrap()).unwrap();
        let l = classification_loss(&mut tape, sharp, &[1]).unwrap();
        assert!(scalar(&tape, l).abs() < 1e-6);
        assert!(classification_loss(&mut tape, sharp, &[3]).is_err());
    }

    #[test]
    fn negative_weights_are_rejected() {
        let w = LossWeights {
            lambda_identity: -1.0,
            ..LossWeights::stargan_default()
        };
        assert!(w.validate().is_err());
    }
}
