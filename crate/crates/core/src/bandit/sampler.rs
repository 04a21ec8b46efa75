use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::BanditError;
use crate::seeding::Rng;

/// Discounted Beta posterior of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaArm {
    pub s: f64,
    pub f: f64,
    pub a0: f64,
    pub b0: f64,
}

impl Default for BetaArm {
    fn default() -> Self {
        Self { s: 0.0, f: 0.0, a0: 1.0, b0: 1.0 }
    }
}

impl BetaArm {
    pub fn with_prior(a0: f64, b0: f64) -> Self {
        Self { s: 0.0, f: 0.0, a0, b0 }
    }

    pub fn alpha(&self) -> f64 {
        self.s + self.a0
    }

    pub fn beta(&self) -> f64 {
        self.f + self.b0
    }

    /// Mean and variance of `Beta(s + a0, f + b0)`.
    pub fn posterior_stats(&self) -> (f64, f64) {
        let (a, b) = (self.alpha(), self.beta());
        let n = a + b;
        (a / n, a * b / (n * n * (n + 1.0)))
    }

    pub fn discount(&mut self, y: f64) {
        self.s *= y;
        self.f *= y;
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        Beta::new(self.alpha(), self.beta()).expect("positive Beta parameters").sample(rng)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Draws every posterior once and plays the largest draw.
pub fn dts_select(arms: &[BetaArm], rng: &mut Rng) -> usize {
    let draws: Vec<f64> = arms.iter().map(|a| a.sample(rng)).collect();
    argmax(&draws)
}

/// Bernoulli trial on `r_tilde`, then the discounted update of every arm.
/// Returns the binary outcome.
pub fn dts_update(arms: &mut [BetaArm], chosen: usize, r_tilde: f64, discount: f64, rng: &mut Rng) -> Result<bool, BanditError> {
    let r = bernoulli(r_tilde, rng)?;
    for (k, arm) in arms.iter_mut().enumerate() {
        arm.discount(discount);
        if k == chosen {
            if r {
                arm.s += 1.0;
            } else {
                arm.f += 1.0;
            }
        }
    }
    Ok(r)
}

pub fn bernoulli(p: f64, rng: &mut Rng) -> Result<bool, BanditError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(BanditError::RewardOutOfRange(p));
    }
    Ok(rng.random::<f64>() < p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerKind {
    Dts { discount: f64 },
    /// Thompson sampling without discounting.
    Ts,
    EpsGreedy { epsilon: f64 },
    Ucb,
}

impl Default for SamplerKind {
    fn default() -> Self {
        SamplerKind::Dts { discount: 0.8 }
    }
}

impl SamplerKind {
    pub fn label(&self) -> &'static str {
        match self {
            SamplerKind::Dts { .. } => "dts",
            SamplerKind::Ts => "ts",
            SamplerKind::EpsGreedy { .. } => "eps",
            SamplerKind::Ucb => "ucb",
        }
    }

    pub fn build(&self, n_arms: usize) -> Result<Sampler, BanditError> {
        Sampler::new(*self, n_arms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum State {
    Beta { arms: Vec<BetaArm>, discount: f64 },
    Counts { epsilon: Option<f64>, pulls: Vec<u64>, sums: Vec<f64>, t: u64 },
}

/// Single-owner selector over a fixed number of arms.
///
/// Every kind receives the shift-derived rate `r_tilde` and learns from one
/// Bernoulli draw on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampler {
    kind: SamplerKind,
    state: State,
}

impl Sampler {
    pub fn new(kind: SamplerKind, n_arms: usize) -> Result<Self, BanditError> {
        if n_arms == 0 {
            return Err(BanditError::NoArms);
        }
        let beta = |discount: f64| State::Beta { arms: vec![BetaArm::default(); n_arms], discount };
        let counts = |epsilon| State::Counts { epsilon, pulls: vec![0; n_arms], sums: vec![0.0; n_arms], t: 0 };
        let state = match kind {
            SamplerKind::Dts { discount } => {
                if !(discount > 0.0 && discount <= 1.0) {
                    return Err(BanditError::InvalidDiscount(discount));
                }
                beta(discount)
            }
            SamplerKind::Ts => beta(1.0),
            SamplerKind::EpsGreedy { epsilon } => {
                if !(0.0..=1.0).contains(&epsilon) {
                    return Err(BanditError::InvalidEpsilon(epsilon));
                }
                counts(Some(epsilon))
            }
            SamplerKind::Ucb => counts(None),
        };
        Ok(Self { kind, state })
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn n_arms(&self) -> usize {
        match &self.state {
            State::Beta { arms, .. } => arms.len(),
            State::Counts { pulls, .. } => pulls.len(),
        }
    }

    /// Posterior arms for the Thompson kinds.
    pub fn arms(&self) -> Option<&[BetaArm]> {
        match &self.state {
            State::Beta { arms, .. } => Some(arms),
            State::Counts { .. } => None,
        }
    }

    pub fn select(&mut self, rng: &mut Rng) -> usize {
        match &self.state {
            State::Beta { arms, .. } => dts_select(arms, rng),
            State::Counts { epsilon, pulls, sums, t } => {
                let means: Vec<f64> =
                    pulls.iter().zip(sums).map(|(&n, &s)| if n == 0 { 0.0 } else { s / n as f64 }).collect();
                match epsilon {
                    Some(e) => {
                        if rng.random::<f64>() < *e {
                            rng.random_range(0..pulls.len())
                        } else {
                            argmax(&means)
                        }
                    }
                    None => {
                        if let Some(k) = pulls.iter().position(|&n| n == 0) {
                            return k;
                        }
                        let lt = ((*t).max(1) as f64).ln();
                        let ucb: Vec<f64> =
                            means.iter().zip(pulls).map(|(m, &n)| m + (2.0 * lt / n as f64).sqrt()).collect();
                        argmax(&ucb)
                    }
                }
            }
        }
    }

    pub fn update(&mut self, chosen: usize, r_tilde: f64, rng: &mut Rng) -> Result<bool, BanditError> {
        if chosen >= self.n_arms() {
            return Err(BanditError::ArmOutOfRange(chosen));
        }
        match &mut self.state {
            State::Beta { arms, discount } => dts_update(arms, chosen, r_tilde, *discount, rng),
            State::Counts { pulls, sums, t, .. } => {
                let r = bernoulli(r_tilde, rng)?;
                pulls[chosen] += 1;
                sums[chosen] += r as u8 as f64;
                *t += 1;
                Ok(r)
            }
        }
    }
}
