use super::net::Gradients;
use super::tensor::Tensor2;
use crate::error::{check_dim, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter set. Moments are allocated on the
/// first step from the gradient shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub m: Vec<Tensor2>,
    pub v: Vec<Tensor2>,
    pub t: u64,
}

impl AdamState {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &Gradients) -> Result<()> {
        check_dim("adam parameter tensors", grads.tensors.len(), params.len())?;
        for (p, g) in params.iter().zip(&grads.tensors) {
            check_dim("adam parameter length", g.data().len(), p.len())?;
        }
        if self.m.is_empty() {
            self.m = grads
                .tensors
                .iter()
                .map(|g| Tensor2::zeros(g.rows(), g.cols()))
                .collect();
            self.v = self.m.clone();
        }
        check_dim("adam state tensors", self.m.len(), grads.tensors.len())?;
        for (m, g) in self.m.iter().zip(&grads.tensors) {
            check_dim("adam state length", m.data().len(), g.data().len())?;
        }

        self.t += 1;
        let AdamConfig {
            alpha,
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(&grads.tensors)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((theta, rho), m), v) in p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * rho;
                *v = beta2 * *v + (1.0 - beta2) * rho * rho;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *theta -= alpha * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
