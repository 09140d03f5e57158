//! Adam with bias correction and L2-style weight decay.

use alloc::vec::Vec;

use crate::{Error, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `weight_decay * param` before the moment updates.
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

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub cfg: AdamConfig,
    /// Number of completed steps.
    pub t: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Tensor<S>], cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One update from the gradient buffers of `params` (a missing buffer counts as zero).
    pub fn step(&mut self, params: &mut [Tensor<S>], lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::invalid("adam", alloc::format!("learning rate must be >= 0, got {lr}")));
        }
        if params.len() != self.m.len() {
            return Err(Error::DimMismatch {
                op: "adam",
                dim: "parameter count",
                expected: self.m.len(),
                actual: params.len(),
            });
        }
        self.t += 1;
        let c = self.cfg;
        let (b1, b2) = (S::from_f64(c.beta1), S::from_f64(c.beta2));
        let (one_b1, one_b2) = (S::from_f64(1.0 - c.beta1), S::from_f64(1.0 - c.beta2));
        let bc1 = S::from_f64(1.0 - libm::pow(c.beta1, self.t as f64));
        let bc2 = S::from_f64(1.0 - libm::pow(c.beta2, self.t as f64));
        let (wd, eps, lr) = (S::from_f64(c.weight_decay), S::from_f64(c.eps), S::from_f64(lr));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad: Vec<S> = match p.grad() {
                Some(g) => g.to_vec(),
                None => alloc::vec![S::ZERO; p.numel()],
            };
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad[i] + wd * *w;
                md[i] = b1 * md[i] + one_b1 * g;
                vd[i] = b2 * vd[i] + one_b2 * g * g;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
