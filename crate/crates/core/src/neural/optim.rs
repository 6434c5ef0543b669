use super::params::ParamSet;
use crate::error::{Error, Result};

fn check_len(params: usize, grads: usize) -> Result<()> {
    if params != grads {
        return Err(Error::ShapeMismatch {
            expected: format!("{params} gradients"),
            found: format!("{grads}"),
        });
    }
    Ok(())
}

/// theta <- theta - eta * grad
pub fn gd_step(params: &mut [f64], grads: &[f64], eta: f64) -> Result<()> {
    check_len(params.len(), grads.len())?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= eta * g;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected update.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len(params.len(), grads.len())?;
        check_len(self.m.len(), grads.len())?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Step on a parameter set using its own gradient buffer.
    pub fn step_params(&mut self, p: &mut ParamSet) -> Result<()> {
        let grads = std::mem::take(&mut p.grads);
        let r = self.step(p.values_mut(), &grads);
        p.grads = grads;
        r
    }
}

pub fn gd_step_params(p: &mut ParamSet, eta: f64) -> Result<()> {
    let grads = std::mem::take(&mut p.grads);
    let r = gd_step(p.values_mut(), &grads, eta);
    p.grads = grads;
    r
}
