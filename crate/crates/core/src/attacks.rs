//! Observation attacks bounded in the normalized l-infinity ball: Frank-Wolfe,
//! PGD and FGSM against a frozen critic, plus the GPS spoofing bias.

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowfield::Vec3;
use crate::neural::{NnError, RunningNorm};
use crate::robust_rl::RobustPolicyPair;
use crate::seeding::Rng;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Sign with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    #[serde(rename = "fw")]
    FrankWolfe,
    Pgd,
    Fgsm,
    Spoof,
}

impl AttackKind {
    pub fn label(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::FrankWolfe => "fw",
            AttackKind::Pgd => "pgd",
            AttackKind::Fgsm => "fgsm",
            AttackKind::Spoof => "spoof",
        }
    }

    /// Whether the attack needs critic gradients.
    pub fn is_gradient(self) -> bool {
        matches!(self, AttackKind::FrankWolfe | AttackKind::Pgd | AttackKind::Fgsm)
    }
}

/// Per-component affine map into the space where budgets are measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn from_running(n: &RunningNorm) -> Self {
        Self { mean: n.mean().to_vec(), std: n.std() }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, raw: ArrayView2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(raw.dim(), |(i, j)| (raw[[i, j]] - self.mean[j]) / self.std[j])
    }

    pub fn denormalize(&self, z: ArrayView2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(z.dim(), |(i, j)| z[[i, j]] * self.std[j] + self.mean[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// l-infinity budget in normalized units.
    pub epsilon: f64,
    pub n_steps: usize,
    /// Frank-Wolfe step constant in `c / (k + c)`.
    pub fw_c: f64,
    pub random_start: bool,
    pub spoof_low: f64,
    pub spoof_high: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { epsilon: 1.0, n_steps: 50, fw_c: 2.0, random_start: true, spoof_low: 0.04, spoof_high: 0.06 }
    }
}

impl AttackConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: &str| Err(AttackError::InvalidConfig(m.to_string()));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be finite and non-negative");
        }
        if self.n_steps == 0 {
            return bad("n_steps must be at least 1");
        }
        if !(self.fw_c > 0.0) {
            return bad("fw_c must be positive");
        }
        if !(self.spoof_low <= self.spoof_high) {
            return bad("spoof bias range is empty");
        }
        Ok(())
    }
}

/// Differentiable loss the attacker ascends, evaluated row-wise on raw observations.
pub trait AttackObjective {
    /// Per-row loss and its gradient with respect to the raw observation.
    fn loss_and_grad(&self, obs: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>), NnError>;
}

/// Actor loss `-Q(s, pi(s))` of a frozen pair.
#[derive(Debug, Clone, Copy)]
pub struct ValueAttack<'a> {
    pub pair: &'a RobustPolicyPair,
    /// Route the action through the training-time mixture instead of the deployed agent head.
    pub mixed: bool,
}

impl<'a> ValueAttack<'a> {
    pub fn deployed(pair: &'a RobustPolicyPair) -> Self {
        Self { pair, mixed: false }
    }

    pub fn mixed(pair: &'a RobustPolicyPair) -> Self {
        Self { pair, mixed: true }
    }
}

impl AttackObjective for ValueAttack<'_> {
    fn loss_and_grad(&self, obs: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>), NnError> {
        let (q, g) = if self.mixed {
            self.pair.q_and_obs_grad(obs)?
        } else {
            self.pair.deployed_q_and_obs_grad(obs)?
        };
        Ok((-q, -g))
    }
}

/// Loss gradient in normalized coordinates at `z`.
fn norm_grad<O: AttackObjective + ?Sized>(objective: &O, norm: &Normalizer, z: &Array2<f64>) -> Result<Array2<f64>, NnError> {
    let raw = norm.denormalize(z.view());
    let (_, g) = objective.loss_and_grad(raw.view())?;
    Ok(Array2::from_shape_fn(g.dim(), |(i, j)| g[[i, j]] * norm.std[j]))
}

fn uniform_ball(shape: (usize, usize), eps: f64, rng: &mut Rng) -> Array2<f64> {
    if eps == 0.0 {
        return Array2::zeros(shape);
    }
    Array2::from_shape_simple_fn(shape, || rng.random_range(-eps..=eps))
}

fn check_dims(obs: ArrayView2<f64>, norm: &Normalizer) -> Result<(), AttackError> {
    if obs.ncols() != norm.dim() {
        return Err(NnError::DimensionMismatch { expected: norm.dim(), got: obs.ncols() }.into());
    }
    Ok(())
}

/// Frank-Wolfe over the l-infinity ball: `delta <- f s + (1 - f) delta`, `f = c / (k + c)`,
/// `s = eps * sign(g)` from the linear oracle. Each row is attacked independently.
pub fn fw_attack<O: AttackObjective + ?Sized>(
    obs: ArrayView2<f64>,
    objective: &O,
    norm: &Normalizer,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<Array2<f64>, AttackError> {
    cfg.validate()?;
    check_dims(obs, norm)?;
    let eps = cfg.epsilon;
    if eps == 0.0 {
        return Ok(obs.to_owned());
    }
    let z0 = norm.normalize(obs);
    // delta_0 = 2 eps * U(-0.5, 0.5)
    let mut delta = uniform_ball(z0.dim(), eps, rng);
    for k in 0..cfg.n_steps {
        let f = cfg.fw_c / (k as f64 + cfg.fw_c);
        let g = norm_grad(objective, norm, &(&z0 + &delta))?;
        Zip::from(&mut delta).and(&g).for_each(|d, &gk| *d = f * eps * sign(gk) + (1.0 - f) * *d);
    }
    Ok(norm.denormalize((z0 + delta).view()))
}

/// Sign-gradient ascent with step `eps / N`, clipped back into the ball after every step.
pub fn pgd_attack<O: AttackObjective + ?Sized>(
    obs: ArrayView2<f64>,
    objective: &O,
    norm: &Normalizer,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<Array2<f64>, AttackError> {
    cfg.validate()?;
    check_dims(obs, norm)?;
    let eps = cfg.epsilon;
    if eps == 0.0 {
        return Ok(obs.to_owned());
    }
    let z0 = norm.normalize(obs);
    let step = eps / cfg.n_steps as f64;
    let mut delta = if cfg.random_start { uniform_ball(z0.dim(), eps, rng) } else { Array2::zeros(z0.dim()) };
    for _ in 0..cfg.n_steps {
        let g = norm_grad(objective, norm, &(&z0 + &delta))?;
        Zip::from(&mut delta).and(&g).for_each(|d, &gk| *d = (*d + step * sign(gk)).clamp(-eps, eps));
    }
    Ok(norm.denormalize((z0 + delta).view()))
}

/// One full-budget sign step in normalized space.
pub fn fgsm<O: AttackObjective + ?Sized>(
    obs: ArrayView2<f64>,
    objective: &O,
    norm: &Normalizer,
    epsilon: f64,
) -> Result<Array2<f64>, AttackError> {
    check_dims(obs, norm)?;
    if !(epsilon >= 0.0) {
        return Err(AttackError::InvalidConfig("epsilon must be non-negative".into()));
    }
    if epsilon == 0.0 {
        return Ok(obs.to_owned());
    }
    let mut z = norm.normalize(obs);
    let g = norm_grad(objective, norm, &z)?;
    Zip::from(&mut z).and(&g).for_each(|zi, &gi| *zi += epsilon * sign(gi));
    Ok(norm.denormalize(z.view()))
}

/// Dispatches a gradient attack by kind; `None` and `Spoof` leave observations unchanged.
pub fn attack_observations<O: AttackObjective + ?Sized>(
    kind: AttackKind,
    obs: ArrayView2<f64>,
    objective: &O,
    norm: &Normalizer,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<Array2<f64>, AttackError> {
    match kind {
        AttackKind::FrankWolfe => fw_attack(obs, objective, norm, cfg, rng),
        AttackKind::Pgd => pgd_attack(obs, objective, norm, cfg, rng),
        AttackKind::Fgsm => fgsm(obs, objective, norm, cfg.epsilon),
        AttackKind::None | AttackKind::Spoof => Ok(obs.to_owned()),
    }
}

/// Adds an independent `U(low, high)` bias to each position component.
pub fn spoof_position(p: &Vec3, cfg: &AttackConfig, rng: &mut Rng) -> Vec3 {
    p.map(|x| x + rng.random_range(cfg.spoof_low..=cfg.spoof_high))
}

/// Largest normalized l-infinity displacement between two observation batches.
pub fn normalized_linf(a: ArrayView2<f64>, b: ArrayView2<f64>, norm: &Normalizer) -> f64 {
    let (za, zb) = (norm.normalize(a), norm.normalize(b));
    Zip::from(&za).and(&zb).fold(0.0, |m: f64, x, y| m.max((x - y).abs()))
}
