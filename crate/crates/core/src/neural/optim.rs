use serde::{Deserialize, Serialize};

use super::{Mlp, NnError};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

/// Heavy-ball SGD with L2 weight decay folded into the gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Momentum {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Momentum {
    pub fn new(n: usize, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self { lr, momentum, weight_decay, velocity: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.velocity.len());
        assert_eq!(grad.len(), self.velocity.len());
        for i in 0..params.len() {
            let v = self.momentum * self.velocity[i] + grad[i] + self.weight_decay * params[i];
            self.velocity[i] = v;
            params[i] -= self.lr * v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam(Adam),
    Momentum(Momentum),
}

impl Optimizer {
    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Adam(o) => o.step(params, grad),
            Optimizer::Momentum(o) => o.step(params, grad),
        }
    }
}

/// Polyak averaging: `target <- (1 - fraction) target + fraction online`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, fraction: f64) -> Result<(), NnError> {
    if target.n_params() != online.n_params() {
        return Err(NnError::ShapeMismatch(target.n_params(), online.n_params()));
    }
    for (t, &o) in target.params_mut().iter_mut().zip(online.params()) {
        *t = (1.0 - fraction) * *t + fraction * o;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Activation;
    use approx::assert_relative_eq;

    #[test]
    fn adam_zero_gradient_only_decays() {
        let mut p = vec![1.0, -2.0, 0.5];
        let mut opt = Adam::new(3, 1e-3, 5e-4);
        opt.step(&mut p, &[0.0; 3]);
        let k = 1.0 - 1e-3 * 5e-4;
        assert_eq!(p, vec![k, -2.0 * k, 0.5 * k]);
        let mut q = vec![1.0, -2.0];
        Adam::new(2, 1e-3, 0.0).step(&mut q, &[0.0; 2]);
        assert_eq!(q, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![0.0, 0.0];
        Adam::new(2, 0.01, 0.0).step(&mut p, &[3.0, -0.2]);
        assert_relative_eq!(p[0], -0.01, epsilon = 1e-9);
        assert_relative_eq!(p[1], 0.01, epsilon = 1e-9);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = vec![0.0];
        let mut opt = Momentum::new(1, 0.1, 0.9, 0.0);
        opt.step(&mut p, &[1.0]);
        assert_relative_eq!(p[0], -0.1);
        opt.step(&mut p, &[1.0]);
        assert_relative_eq!(p[0], -0.1 - 0.1 * 1.9, epsilon = 1e-15);
    }

    #[test]
    fn soft_update_examples() {
        let mut target = Mlp::zeros(&[1, 1], Activation::Relu, Activation::Identity);
        target.set_params(&[1.0, 1.0]).unwrap();
        let online = Mlp::zeros(&[1, 1], Activation::Relu, Activation::Identity);
        let mut t = target.clone();
        soft_update(&mut t, &online, 0.01).unwrap();
        assert_eq!(t.params(), &[0.99, 0.99]);
        let mut t = target.clone();
        soft_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t.params(), online.params());
        let mut t = target.clone();
        soft_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t.params(), target.params());
        let wide = Mlp::zeros(&[2, 1], Activation::Relu, Activation::Identity);
        assert!(soft_update(&mut t, &wide, 0.5).is_err());
    }
}
