//! Rectified Adam.

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::nn::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RadamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-6 }
    }
}

impl RadamConfig {
    /// Maximum length of the approximated simple moving average.
    pub fn rho_inf(&self) -> f64 {
        2.0 / (1.0 - self.beta2) - 1.0
    }

    pub fn rho(&self, step: u64) -> f64 {
        let b2t = self.beta2.powi(step as i32);
        self.rho_inf() - 2.0 * step as f64 * b2t / (1.0 - b2t)
    }

    /// Variance rectification factor, or `None` while the variance of the
    /// adaptive rate is intractable.
    pub fn rectifier(&self, step: u64) -> Option<f64> {
        let rho = self.rho(step);
        if rho <= 4.0 {
            return None;
        }
        let inf = self.rho_inf();
        Some(((rho - 4.0) * (rho - 2.0) * inf / ((inf - 4.0) * (inf - 2.0) * rho)).sqrt())
    }
}

/// Moment estimates for one [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Radam {
    pub config: RadamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Set when the most recent call skipped a non-finite gradient.
    pub skipped_last: bool,
}

impl Radam {
    pub fn new(config: RadamConfig, params: &ParamSet) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { config, step: 0, m: zeros(), v: zeros(), skipped_last: false }
    }

    /// One update. Returns `Ok(false)` and leaves everything untouched when
    /// any gradient entry is non-finite.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<bool> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (p, g) in params.tensors().iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
        }
        if !grads.iter().all(Tensor::is_finite) {
            self.skipped_last = true;
            return Ok(false);
        }
        self.skipped_last = false;
        self.step += 1;
        let RadamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let rect = self.config.rectifier(self.step);
        for ((p, g), (m, v)) in params.tensors_mut().iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                p[j] -= match rect {
                    Some(r) => lr * r * m_hat * bc2.sqrt() / (v[j].sqrt() + eps),
                    None => lr * m_hat,
                };
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParamSet {
        let mut s = ParamSet::new();
        s.push("x", Tensor::scalar(v));
        s
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = scalar_set(0.7);
        let mut opt = Radam::new(RadamConfig::default(), &p);
        for _ in 0..10 {
            assert!(opt.step(&mut p, &[Tensor::scalar(0.0)], 1e-3).unwrap());
        }
        assert_eq!(p.get(0).item(), 0.7);
        assert_eq!(opt.step, 10);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = scalar_set(0.7);
        let mut opt = Radam::new(RadamConfig::default(), &p);
        assert!(!opt.step(&mut p, &[Tensor::scalar(f64::NAN)], 1e-3).unwrap());
        assert!(opt.skipped_last);
        assert_eq!(opt.step, 0);
        assert_eq!(p.get(0).item(), 0.7);
    }

    #[test]
    fn rectification_activates_after_rho_exceeds_four() {
        let c = RadamConfig::default();
        let first = (1..100).find(|&t| c.rectifier(t).is_some()).unwrap();
        // rho_t = rho_inf - 2 t b^t / (1 - b^t) evaluated independently
        let rho = |t: f64| 1999.0 - 2.0 * t * 0.999f64.powf(t) / (1.0 - 0.999f64.powf(t));
        assert!(rho(first as f64) > 4.0);
        assert!(rho(first as f64 - 1.0) <= 4.0);
        assert_eq!(first, 5);
    }

    #[test]
    fn quadratic_converges() {
        let mut p = scalar_set(0.05);
        let mut opt = Radam::new(RadamConfig::default(), &p);
        for _ in 0..500 {
            let x = p.get(0).item();
            opt.step(&mut p, &[Tensor::scalar(2.0 * (x - 0.0))], 1e-3).unwrap();
        }
        assert!(p.get(0).item().abs() < 1e-3, "{}", p.get(0).item());
    }
}
