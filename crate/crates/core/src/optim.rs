use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient; 0 disables it.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    config: AdamConfig,
    first: Vec<Array2<S>>,
    second: Vec<Array2<S>>,
    steps: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, params: &ParamSet<S>) -> Self {
        let zeros = || params.iter().map(|(_, p)| Array2::zeros(p.dim())).collect::<Vec<_>>();
        Adam {
            config,
            first: zeros(),
            second: zeros(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &[Array2<S>], learning_rate: f64) {
        assert_eq!(grads.len(), self.first.len(), "gradient list does not match parameters");
        self.steps += 1;
        let c = self.config;
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let one = S::one();
        let correction1 = S::of(1.0 - c.beta1.powi(self.steps as i32));
        let correction2 = S::of(1.0 - c.beta2.powi(self.steps as i32));
        let lr = S::of(learning_rate);
        let eps = S::of(c.eps);
        let wd = S::of(c.weight_decay);
        for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g + wd * *p;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}
