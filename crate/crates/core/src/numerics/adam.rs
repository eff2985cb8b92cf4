use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, Params, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created lazily on the
/// first step and keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Vec<T>>,
    second: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step(&mut self, params: &mut Params<T>, grads: &Gradients<T>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::contract(format!(
                "adam_step: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::contract(format!("adam_step: no gradient for `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::dim("adam_step", p.shape(), g.shape()));
            }
        }

        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        let bc1 = T::one() - T::of(c.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::of(c.beta2.powi(self.step as i32));

        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("checked above").data();
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); g.len()]);
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); g.len()]);
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn single(p: f64, g: f64) -> (Params<f64>, Gradients<f64>) {
        let mut params = Params::new();
        params.insert("p", Tensor::vector(vec![p]));
        let mut grads = Gradients::default();
        grads.insert("p", Tensor::vector(vec![g]));
        (params, grads)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut params, grads) = single(0.7, 0.0);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut params, &grads).unwrap();
        assert_eq!(params.get("p").unwrap().data(), &[0.7]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut params, grads) = single(1.0, 1.0);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut params, &grads).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = lr·1/(1+ε)
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((params.get("p").unwrap().data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_copies_stay_identical() {
        let (mut a, ga) = single(0.3, -0.2);
        let (mut b, gb) = single(0.3, -0.2);
        let mut oa = Adam::new(AdamConfig::default());
        let mut ob = Adam::new(AdamConfig::default());
        for _ in 0..2 {
            oa.step(&mut a, &ga).unwrap();
            ob.step(&mut b, &gb).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = Params::new();
        params.insert("p", Tensor::<f64>::zeros(&[2]));
        let mut grads = Gradients::default();
        grads.insert("p", Tensor::zeros(&[3]));
        let mut adam = Adam::new(AdamConfig::default());
        assert!(matches!(
            adam.step(&mut params, &grads),
            Err(Error::Dimension { .. })
        ));
    }
}
