//! Critic value distributions on a fixed probe set, their 1-Wasserstein shift
//! under attack, and the Bernoulli success rates derived from the shifts.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{attack_observations, AttackConfig, AttackError, AttackKind, Normalizer, ValueAttack};
use crate::environment::{EnvError, Environment, OBS_DIM};
use crate::neural::NnError;
use crate::robust_rl::RobustPolicyPair;
use crate::seeding::{derive_seed, stream, Stream};

/// Floor that stands in for a zero shift when forming ratios.
pub const SHIFT_FLOOR: f64 = 1e-9;

pub const DEFAULT_PROBE_SIZE: usize = 512;

#[derive(Debug, Error)]
pub enum ShiftError {
    #[error("empty sample")]
    Empty,
    #[error("shift vector entry {index} is {value}, expected a finite non-negative number")]
    InvalidShift { index: usize, value: f64 },
    #[error("k_mult must lie in (0, 1], got {0}")]
    InvalidMultiplier(f64),
    #[error("non-finite critic value")]
    NonFinite,
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Critic values sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSample {
    values: Vec<f64>,
}

impl ValueSample {
    pub fn new(mut values: Vec<f64>) -> Result<Self, ShiftError> {
        if values.is_empty() {
            return Err(ShiftError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ShiftError::NonFinite);
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Exact 1-Wasserstein distance between two empirical measures,
/// `int_0^1 |F_a^-1(u) - F_b^-1(u)| du`.
///
/// Both quantile functions are step functions, so the integral is a finite
/// sum over the merged breakpoints `i/n` and `j/m`. For equal sizes this is
/// the mean absolute difference of the sorted samples.
pub fn wasserstein1(a: &ValueSample, b: &ValueSample) -> f64 {
    let (x, y) = (a.values(), b.values());
    let (n, m) = (x.len(), y.len());
    if n == m {
        return x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>() / n as f64;
    }
    // Walk the merged grid in integer units of 1 / (n m) to avoid drift.
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ti, mut tj) = (m, n);
    let mut u = 0usize;
    let total = n * m;
    let mut acc = 0.0;
    while u < total {
        let next = ti.min(tj);
        acc += (next - u) as f64 * (x[i] - y[j]).abs();
        u = next;
        if ti == next && i + 1 < n {
            i += 1;
            ti += m;
        }
        if tj == next && j + 1 < m {
            j += 1;
            tj += n;
        }
    }
    acc / total as f64
}

/// Raw-slice convenience wrapper around [`wasserstein1`].
pub fn wasserstein1_slices(a: &[f64], b: &[f64]) -> Result<f64, ShiftError> {
    Ok(wasserstein1(&ValueSample::new(a.to_vec())?, &ValueSample::new(b.to_vec())?))
}

/// `Q(s, pi(s))` over probe states; with an attack, each state is first replaced by
/// its adversarial counterpart and both policy heads see the perturbed state.
pub fn value_distribution(
    pair: &RobustPolicyPair,
    probes: ArrayView2<f64>,
    attack: Option<(AttackKind, &AttackConfig)>,
    seed: u64,
) -> Result<ValueSample, ShiftError> {
    if probes.nrows() == 0 {
        return Err(ShiftError::Empty);
    }
    let states = match attack {
        Some((kind, cfg)) if kind.is_gradient() => {
            let norm = Normalizer::from_running(&pair.obs_norm);
            let mut rng = stream(seed, Stream::Attack);
            attack_observations(kind, probes, &ValueAttack::mixed(pair), &norm, cfg, &mut rng)?
        }
        _ => probes.to_owned(),
    };
    ValueSample::new(pair.q_values(states.view())?.to_vec())
}

/// Which clean distribution each attacked model is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Every model against the clean vanilla values.
    #[default]
    VanillaClean,
    /// Every model against its own clean values.
    OwnClean,
}

/// `[d^0, d^{alpha_1}, ...]` for models ordered vanilla first.
pub fn shift_vector(
    models: &[&RobustPolicyPair],
    probes: ArrayView2<f64>,
    kind: AttackKind,
    cfg: &AttackConfig,
    reference: ReferenceMode,
    seed: u64,
) -> Result<Vec<f64>, ShiftError> {
    let vanilla = models.first().ok_or(ShiftError::Empty)?;
    let vanilla_clean = value_distribution(vanilla, probes, None, seed)?;
    models
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let attacked = value_distribution(m, probes, Some((kind, cfg)), derive_seed(seed, k as u64))?;
            let d = match reference {
                ReferenceMode::VanillaClean => wasserstein1(&vanilla_clean, &attacked),
                ReferenceMode::OwnClean => wasserstein1(&value_distribution(m, probes, None, seed)?, &attacked),
            };
            Ok(d)
        })
        .collect()
}

fn check_shifts(d: &[f64]) -> Result<(), ShiftError> {
    if d.is_empty() {
        return Err(ShiftError::Empty);
    }
    match d.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        Some(index) => Err(ShiftError::InvalidShift { index, value: d[index] }),
        None => Ok(()),
    }
}

/// `p_k = k_mult * d_min / d_k`, with every shift floored at [`SHIFT_FLOOR`] so
/// zero-shift models receive `k_mult` and the rest a tiny but positive rate.
pub fn bernoulli_params(d: &[f64], k_mult: f64) -> Result<Vec<f64>, ShiftError> {
    check_shifts(d)?;
    if !(k_mult > 0.0 && k_mult <= 1.0) {
        return Err(ShiftError::InvalidMultiplier(k_mult));
    }
    let floored: Vec<f64> = d.iter().map(|v| v.max(SHIFT_FLOOR)).collect();
    let d_min = floored.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(floored.iter().map(|dk| k_mult * (d_min / dk)).collect())
}

/// `r_k = d_min / d_k`.
pub fn proxy_reward(d: &[f64]) -> Result<Vec<f64>, ShiftError> {
    bernoulli_params(d, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub epsilon: f64,
    pub d: Vec<f64>,
    pub d_min: f64,
    pub p_true: Vec<f64>,
    pub k_mult: f64,
}

impl ShiftReport {
    pub fn from_shifts(epsilon: f64, d: Vec<f64>, k_mult: f64) -> Result<Self, ShiftError> {
        let p_true = bernoulli_params(&d, k_mult)?;
        let d_min = d.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { epsilon, d, d_min, p_true, k_mult })
    }

    /// Index of the model with the largest success rate, lowest index on ties.
    pub fn best(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.p_true.iter().enumerate() {
            if p > self.p_true[best] {
                best = k;
            }
        }
        best
    }
}

/// Full calibration for one budget: shifts of every model and their success rates.
pub fn calibrate(
    models: &[&RobustPolicyPair],
    probes: ArrayView2<f64>,
    kind: AttackKind,
    cfg: &AttackConfig,
    reference: ReferenceMode,
    k_mult: f64,
    seed: u64,
) -> Result<ShiftReport, ShiftError> {
    let d = shift_vector(models, probes, kind, cfg, reference, seed)?;
    ShiftReport::from_shifts(cfg.epsilon, d, k_mult)
}

/// States visited by the deterministic agent head on clean rollouts, `n` rows.
pub fn harvest_probe_states(env: &Environment, pair: &RobustPolicyPair, n: usize, seed: u64) -> Result<Array2<f64>, ShiftError> {
    let mut env = env.clone();
    let mut rows: Vec<[f64; OBS_DIM]> = Vec::with_capacity(n);
    let mut episode = 0u64;
    while rows.len() < n {
        let mut obs = env.reset(derive_seed(seed, episode))?.to_array();
        episode += 1;
        loop {
            rows.push(obs);
            if rows.len() == n {
                break;
            }
            let out = env.step_normalized(&pair.act(&obs)?)?;
            obs = out.next_obs.to_array();
            if out.done {
                break;
            }
        }
    }
    Ok(Array2::from_shape_fn((n, OBS_DIM), |(i, j)| rows[i][j]))
}
