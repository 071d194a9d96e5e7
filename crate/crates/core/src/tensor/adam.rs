use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// lr 2e-4, β₁ 0.5 as used for both generators and discriminators;
    /// β₂ and ε are the usual defaults.
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T: Scalar> {
    pub first: Tensor<T>,
    pub second: Tensor<T>,
}

/// Adam optimizer state for a named parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    t: u64,
    moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Number of completed steps.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> &BTreeMap<String, Moments<T>> {
        &self.moments
    }

    /// Rebuilds a state from saved moments, e.g. when resuming training.
    pub fn restore(config: AdamConfig, t: u64, moments: BTreeMap<String, Moments<T>>) -> Self {
        AdamState { config, t, moments }
    }

    /// One bias-corrected Adam update over `(name, parameter, gradient)`
    /// triples. The step counter advances once per call.
    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a mut Tensor<T>, &'a Tensor<T>)>,
    {
        let params: Vec<_> = params.into_iter().collect();
        for (name, p, g) in &params {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("parameter {name} has shape {:?} but gradient {:?}", p.shape(), g.shape()),
                ));
            }
            if let Some(m) = self.moments.get(*name) {
                if m.first.shape() != p.shape() {
                    return Err(Error::shape(
                        "adam_step",
                        format!("state for {name} has shape {:?}, parameter {:?}", m.first.shape(), p.shape()),
                    ));
                }
            }
        }
        self.t += 1;
        let cfg = self.config;
        let t = self.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
        let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
        let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
        for (name, p, g) in params {
            let m = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
                first: Tensor::zeros(p.shape().to_vec()),
                second: Tensor::zeros(p.shape().to_vec()),
            });
            let first = m.first.data_mut();
            let second = m.second.data_mut();
            for (i, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                first[i] = b1 * first[i] + one_b1 * gv;
                second[i] = b2 * second[i] + one_b2 * gv * gv;
                let m_hat = first[i] / bc1;
                let v_hat = second[i] / bc2;
                let delta = lr * m_hat / (v_hat.sqrt() + eps);
                if delta != T::zero() {
                    *pv = *pv - delta;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::<f32>::new([3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::zeros([3]);
        let before = p.clone();
        let mut s = AdamState::new(AdamConfig::default());
        s.step([("w", &mut p, &g)]).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::<f64>::new([2], vec![0.0, 0.0]).unwrap();
        let g = Tensor::new([2], vec![3.0, -0.25]).unwrap();
        let mut s = AdamState::new(cfg);
        s.step([("w", &mut p, &g)]).unwrap();
        // m̂ = g and v̂ = g², so the step is α·g/(|g| + ε).
        for (v, grad) in p.data().iter().zip(g.data()) {
            let expected = -cfg.lr * grad.signum();
            assert!((v - expected).abs() < cfg.lr * cfg.eps / grad.abs() + 1e-18);
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        let mut p = Tensor::<f32>::new([2], vec![-0.0, 4.0]).unwrap();
        let g = Tensor::new([2], vec![1.0, -1.0]).unwrap();
        let mut s = AdamState::new(cfg);
        s.step([("w", &mut p, &g)]).unwrap();
        s.step([("w", &mut p, &g)]).unwrap();
        assert_eq!(p.data()[0].to_bits(), (-0.0f32).to_bits());
        assert_eq!(p.data()[1], 4.0);
        assert_eq!(s.t(), 2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::<f32>::zeros([2]);
        let g = Tensor::zeros([3]);
        let mut s = AdamState::new(AdamConfig::default());
        assert!(matches!(s.step([("w", &mut p, &g)]), Err(Error::Shape { .. })));
        assert_eq!(s.t(), 0);
    }
}
