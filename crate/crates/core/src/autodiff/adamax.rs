use serde::{Deserialize, Serialize};

use super::RealTensor;
use crate::error::{Error, Result};

/// Adamax hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamaxConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamaxConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adamax (the infinity-norm variant of Adam).
///
/// ```text
/// m ← β1·m + (1−β1)·g
/// u ← max(β2·u, |g|)
/// θ ← θ − lr/(1−β1^t) · m/(u+ε)
/// ```
#[derive(Debug, Clone)]
pub struct Adamax {
    config: AdamaxConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
}

impl Adamax {
    pub fn new(config: AdamaxConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            u: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> &AdamaxConfig {
        &self.config
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Infinity-norm estimates, one vector per parameter tensor.
    pub fn infinity_norms(&self) -> &[Vec<f64>] {
        &self.u
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut [&mut RealTensor], grads: &[RealTensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim("Adamax::step", &[params.len()], &[grads.len()]));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.u = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::dim("Adamax::step state", &[self.m.len()], &[params.len()]));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.len() != m.len() {
                return Err(Error::dim("Adamax::step", p.shape(), g.shape()));
            }
        }
        self.t += 1;
        let AdamaxConfig { lr, beta1, beta2, eps } = self.config;
        let step_size = lr / (1.0 - beta1.powi(self.t as i32));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let u = &mut self.u[i];
            for (((theta, &gv), mv), uv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(u.iter_mut()) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *uv = (beta2 * *uv).max(gv.abs());
                *theta -= step_size * *mv / (*uv + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.5, -0.02, 1e-3] {
            let mut opt = Adamax::new(AdamaxConfig::default());
            let mut theta = RealTensor::scalar(1.0);
            opt.step(&mut [&mut theta], &[RealTensor::scalar(g)]).unwrap();
            let lr = 2e-3;
            let expected = 1.0 - lr * g / (g.abs() + 1e-8);
            assert!((theta.data()[0] - expected).abs() < 1e-15);
            assert!((theta.data()[0] - (1.0 - lr * g.signum())).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut opt = Adamax::new(AdamaxConfig::default());
        let mut theta = RealTensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let before = theta.clone();
        opt.step(&mut [&mut theta], &[RealTensor::zeros(&[3])]).unwrap();
        assert_eq!(theta, before);
    }

    #[test]
    fn two_steps_on_a_parabola_decrease_it() {
        let mut opt = Adamax::new(AdamaxConfig::default());
        let mut theta = RealTensor::scalar(1.0);
        let mut f = vec![1.0];
        for _ in 0..2 {
            let g = RealTensor::scalar(2.0 * theta.data()[0]);
            opt.step(&mut [&mut theta], &[g]).unwrap();
            f.push(theta.data()[0].powi(2));
        }
        assert!(f[1] < f[0] && f[2] < f[1]);
        // Hand recursion: θ1 = 1 − lr; m1 = 0.2, u1 = 2; g2 = 2θ1,
        // m2 = 0.9·0.2 + 0.1·g2, u2 = max(0.999·2, g2), θ2 = θ1 − lr/(1−0.81)·m2/u2.
        let lr = 2e-3;
        let t1 = 1.0 - lr * 2.0 / (2.0 + 1e-8);
        let g2 = 2.0 * t1;
        let m2 = 0.9 * 0.2 + 0.1 * g2;
        let u2 = f64::max(0.999 * 2.0, g2);
        let t2 = t1 - lr / (1.0 - 0.81) * m2 / (u2 + 1e-8);
        assert!((theta.data()[0] - t2).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut opt = Adamax::new(AdamaxConfig { lr: 0.0, ..Default::default() });
        let mut theta = RealTensor::new(vec![2], vec![0.3, -0.7]).unwrap();
        let before = theta.clone();
        for _ in 0..5 {
            opt.step(&mut [&mut theta], &[RealTensor::new(vec![2], vec![1.0, -4.0]).unwrap()]).unwrap();
        }
        assert_eq!(theta, before);
        assert_eq!(opt.steps(), 5);
        assert!(opt.infinity_norms()[0].iter().all(|&u| u >= 0.0));
    }
}
