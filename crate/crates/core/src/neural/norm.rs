use serde::{Deserialize, Serialize};

/// Floor on the per-component standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Welford running mean and variance per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    /// Stats that leave inputs unchanged.
    pub fn identity(dim: usize) -> Self {
        Self { count: 2, mean: vec![0.0; dim], m2: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..self.mean.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Sample standard deviation, floored; `1` before two observations.
    pub fn std(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![1.0; self.mean.len()];
        }
        let denom = (self.count - 1) as f64;
        self.m2.iter().map(|m| (m / denom).sqrt().max(STD_FLOOR)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matches_two_pass_statistics() {
        let xs = [[1.0, 10.0], [2.0, 10.0], [4.0, 10.0], [7.0, 10.0]];
        let mut n = RunningNorm::new(2);
        xs.iter().for_each(|x| n.update(x));
        assert_relative_eq!(n.mean()[0], 3.5);
        let var = xs.iter().map(|x| (x[0] - 3.5f64).powi(2)).sum::<f64>() / 3.0;
        assert_relative_eq!(n.std()[0], var.sqrt(), epsilon = 1e-12);
        assert_eq!(n.std()[1], STD_FLOOR);
    }

    #[test]
    fn identity_stats() {
        let n = RunningNorm::identity(3);
        assert_eq!(n.mean(), &[0.0; 3]);
        assert_eq!(n.std(), vec![1.0; 3]);
    }
}
