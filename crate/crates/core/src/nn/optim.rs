use super::Params;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moment buffers follow the tensor order of the parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &dyn Params) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.2.len()]).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut dyn Params, grads: &dyn Params, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let g = grads.tensors();
        for (((p, (_, _, g)), m), v) in params.tensors_mut().into_iter().zip(g).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use ndarray::{array, Array1};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Linear {
            w: array![[1.0, 2.0]],
            b: Array1::zeros(1),
        };
        let g = Linear {
            w: array![[0.5, -3.0]],
            b: Array1::zeros(1),
        };
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, &g, 0.1);
        assert!((p.w[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p.w[[0, 1]] - 2.1).abs() < 1e-6);
        assert_eq!(p.b[0], 0.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Linear {
            w: array![[3.0, -4.0]],
            b: array![1.0],
        };
        let mut opt = Adam::new(AdamConfig::default(), &p);
        for _ in 0..2000 {
            let g = p.clone();
            opt.step(&mut p, &g, 0.05);
        }
        assert!(p.w.iter().chain(&p.b).all(|v| v.abs() < 1e-3));
    }
}
