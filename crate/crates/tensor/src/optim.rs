//! Adam over a fixed, ordered list of leaf tensors.

use crate::element::Element;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T: Element> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        Adam {
            config,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` belongs to `params[i]`; `None` leaves
    /// the parameter (and its moments) untouched.
    pub fn step(&mut self, params: &[Tensor<T>], grads: &[Option<Tensor<T>>]) {
        assert_eq!(params.len(), self.m.len(), "Adam: parameter count changed");
        assert_eq!(params.len(), grads.len(), "Adam: one gradient per parameter");
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let one = T::one();
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = T::lit(c.lr / bias1);
        let bias2_sqrt = T::lit(bias2.sqrt());
        let eps = T::lit(c.eps);
        for ((p, g), (m, v)) in params.iter().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let Some(g) = g else { continue };
            let gd = g.data();
            p.update_data(|w| {
                for i in 0..w.len() {
                    let gi = gd[i];
                    m[i] = b1 * m[i] + (one - b1) * gi;
                    v[i] = b2 * v[i] + (one - b2) * gi * gi;
                    let denom = v[i].sqrt() / bias2_sqrt + eps;
                    w[i] = w[i] - step_size * m[i] / denom;
                }
            });
        }
    }

    /// Moments and step counter, for checkpointing.
    pub fn state(&self) -> (u64, &[Vec<T>], &[Vec<T>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn load_state(&mut self, step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) {
        assert_eq!(m.len(), self.m.len(), "Adam state: moment count");
        assert_eq!(v.len(), self.v.len(), "Adam state: moment count");
        for (a, b) in m.iter().zip(&self.m) {
            assert_eq!(a.len(), b.len(), "Adam state: moment size");
        }
        self.step = step;
        self.m = m;
        self.v = v;
    }
}
