use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor, in the
/// order the parameters are passed to [`Adam::step`].
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Array2<f64>>) -> Self {
        let (first, second) = params
            .into_iter()
            .map(|p| (Array2::zeros(p.raw_dim()), Array2::zeros(p.raw_dim())))
            .unzip();
        Adam {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                &[self.first.len()],
                &[params.len(), grads.len()],
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.raw_dim() != m.raw_dim() || g.raw_dim() != m.raw_dim() {
                return Err(Error::shape("adam_step", m.shape(), g.shape()));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            Zip::from(&mut **p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = array![[1.0, -2.0]];
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), [&p]);
        adam.step(&mut [&mut p], &[Array2::zeros((1, 2))]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_of_unit_gradient() {
        let mut p = array![[0.0]];
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), [&p]);
        adam.step(&mut [&mut p], &[array![[1.0]]]).unwrap();
        let expected = -0.1 * (1.0 / (1.0f64.sqrt() + 1e-8));
        assert_eq!(p[[0, 0]], expected);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = array![[0.0, 1.0]];
        let mut adam = Adam::new(AdamConfig::default(), [&p]);
        assert!(adam.step(&mut [&mut p], &[array![[1.0]]]).is_err());
        assert!(adam.step(&mut [], &[]).is_err());
    }
}
