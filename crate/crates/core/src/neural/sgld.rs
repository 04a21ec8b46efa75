use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seeding::Rng;

/// Adaptive preconditioned gradient noise.
///
/// Tracks a running gradient mean `mu` and a diagonal covariance `c` built
/// from consecutive centered gradients, then returns `g + psi * zeta` with
/// `zeta ~ N(mu, diag(c))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgldNoise {
    pub rho: f64,
    pub psi: f64,
    mu: Vec<f64>,
    c: Vec<f64>,
}

impl SgldNoise {
    pub fn new(n: usize, rho: f64, psi: f64) -> Self {
        Self { rho, psi, mu: vec![0.0; n], c: vec![0.0; n] }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mu
    }

    pub fn covariance(&self) -> &[f64] {
        &self.c
    }

    pub fn perturb(&mut self, grad: &[f64], rng: &mut Rng) -> Vec<f64> {
        assert_eq!(grad.len(), self.mu.len());
        let rho = self.rho;
        for i in 0..grad.len() {
            let g = grad[i];
            let mu_prev = self.mu[i];
            let mu = rho * mu_prev + (1.0 - rho) * g;
            self.mu[i] = mu;
            // The product of consecutive centered gradients can be negative.
            self.c[i] = (rho * self.c[i] + (1.0 - rho) * (g - mu) * (g - mu_prev)).max(0.0);
        }
        if self.psi == 0.0 {
            return grad.to_vec();
        }
        grad.iter()
            .zip(self.mu.iter().zip(&self.c))
            .map(|(&g, (&mu, &c))| {
                let z: f64 = StandardNormal.sample(rng);
                g + self.psi * (mu + c.sqrt() * z)
            })
            .collect()
    }
}
