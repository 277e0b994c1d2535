//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tape::ParamStore;
use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Adam {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update of every trainable tensor.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<(), NnError> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(NnError::Shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.step += 1;
        let c = &self.cfg;
        let t = self.step as i32;
        let b1 = T::c(c.beta1);
        let b2 = T::c(c.beta2);
        let one = T::one();
        let lr = T::c(c.lr);
        let eps = T::c(c.eps);
        let bc1 = T::c(1.0 / (1.0 - c.beta1.powi(t)));
        let bc2 = T::c(1.0 / (1.0 - c.beta2.powi(t)));
        for (i, p) in params.params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let g = &grads[i].data;
            if g.len() != p.value.len() {
                return Err(NnError::Shape(format!("gradient for {} has {} values", p.name, g.len())));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                p.value.data[j] -= lr * (m[j] * bc1) / ((v[j] * bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.push("w", Tensor::from_vec(&[v.len()], v).unwrap(), true);
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = store(vec![0.3, -1.2, 4.0]);
        let before = s.clone();
        let mut opt = Adam::new(AdamConfig::default(), &s);
        for _ in 0..5 {
            opt.update(&mut s, &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(s, before);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut s = store(vec![0.0; 4]);
        let mut opt = Adam::new(AdamConfig::default(), &s);
        let g = Tensor::from_vec(&[4], vec![2.0, -0.5, 1e-3, -30.0]).unwrap();
        opt.update(&mut s, &[g.clone()]).unwrap();
        for (w, gi) in s.value(0).data.iter().zip(&g.data) {
            let want = -3e-4 * gi.signum();
            assert!((w - want).abs() <= 0.01 * want.abs(), "{w} vs {want}");
        }
    }
}
