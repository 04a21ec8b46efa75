use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::sampler::{Sampler, SamplerKind};
use super::BanditError;
use crate::attacks::{attack_observations, spoof_position, AttackConfig, AttackKind, Normalizer, ValueAttack};
use crate::environment::{Environment, OBS_DIM};
use crate::robust_rl::RobustPolicyPair;
use crate::seeding::{derive_seed, stream, Rng, Stream};
use crate::shift::{bernoulli_params, wasserstein1, ShiftReport, ValueSample};

/// Attack applied to every observation during evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreatModel {
    pub kind: AttackKind,
    #[serde(default)]
    pub config: AttackConfig,
}

impl ThreatModel {
    pub fn none() -> Self {
        Self { kind: AttackKind::None, config: AttackConfig::with_epsilon(0.0) }
    }

    pub fn new(kind: AttackKind, config: AttackConfig) -> Self {
        Self { kind, config }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeployConfig {
    /// Steps of (clean, observed) history the online shift is measured on.
    pub window: usize,
    /// Choose one policy per episode instead of one per step.
    pub per_episode: bool,
    pub k_mult: f64,
}

impl Default for DeployConfig {
    fn default() -> Self {
        Self { window: 32, per_episode: false, k_mult: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub reward: f64,
    pub conflicts: usize,
    pub steps: usize,
    pub path_length: f64,
    pub reached_goal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub episodes: Vec<EpisodeMetrics>,
    /// How often each model was live, in steps.
    pub selections: Vec<usize>,
}

impl EvalMetrics {
    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.reward).collect()
    }

    pub fn mean_reward(&self) -> f64 {
        self.episodes.iter().map(|e| e.reward).sum::<f64>() / self.episodes.len() as f64
    }

    pub fn total_conflicts(&self) -> usize {
        self.episodes.iter().map(|e| e.conflicts).sum()
    }

    pub fn conflict_free(&self) -> usize {
        self.episodes.iter().filter(|e| e.conflicts == 0).count()
    }

    pub fn mean_path_length(&self) -> f64 {
        self.episodes.iter().map(|e| e.path_length).sum::<f64>() / self.episodes.len() as f64
    }

    pub fn goal_rate(&self) -> f64 {
        self.episodes.iter().filter(|e| e.reached_goal).count() as f64 / self.episodes.len() as f64
    }
}

/// Generators for the attacker, kept apart from the selector so that a
/// single-policy run sees exactly the same perturbations.
struct Adversary {
    threat: ThreatModel,
    rng_attack: Rng,
    rng_spoof: Rng,
}

impl Adversary {
    fn new(threat: &ThreatModel, seed: u64) -> Result<Self, BanditError> {
        threat.config.validate()?;
        Ok(Self { threat: threat.clone(), rng_attack: stream(seed, Stream::Attack), rng_spoof: stream(seed, Stream::Spoof) })
    }

    /// What the victim `pair` observes at the current state.
    fn observe(&mut self, env: &Environment, clean: &[f64; OBS_DIM], pair: &RobustPolicyPair) -> Result<[f64; OBS_DIM], BanditError> {
        let cfg = &self.threat.config;
        match self.threat.kind {
            AttackKind::None => Ok(*clean),
            AttackKind::Spoof => Ok(env.observe_at(&spoof_position(&env.position(), cfg, &mut self.rng_spoof)).to_array()),
            kind => {
                let row = ArrayView2::from_shape((1, OBS_DIM), clean).expect("row view");
                let norm = Normalizer::from_running(&pair.obs_norm);
                let adv = attack_observations(kind, row, &ValueAttack::deployed(pair), &norm, cfg, &mut self.rng_attack)?;
                Ok(std::array::from_fn(|j| adv[[0, j]]))
            }
        }
    }
}

fn rows(window: &VecDeque<[f64; OBS_DIM]>) -> Array2<f64> {
    Array2::from_shape_fn((window.len(), OBS_DIM), |(i, j)| window[i][j])
}

/// Success rates from the recent history: shift of each model's values on the
/// observed states against the first model's values on the clean states.
pub fn online_p_true(
    models: &[&RobustPolicyPair],
    clean: ArrayView2<f64>,
    observed: ArrayView2<f64>,
    k_mult: f64,
) -> Result<Vec<f64>, BanditError> {
    let reference = ValueSample::new(models[0].q_values(clean)?.to_vec())?;
    let d = models
        .iter()
        .map(|m| Ok(wasserstein1(&reference, &ValueSample::new(m.q_values(observed)?.to_vec())?)))
        .collect::<Result<Vec<f64>, BanditError>>()?;
    Ok(bernoulli_params(&d, k_mult)?)
}

enum Selector {
    Fixed,
    Switching { sampler: Sampler, rng: Rng },
}

fn run(
    models: &[&RobustPolicyPair],
    calibration: Option<&ShiftReport>,
    env: &Environment,
    threat: &ThreatModel,
    mut selector: Selector,
    cfg: &DeployConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalMetrics, BanditError> {
    if cfg.window == 0 {
        return Err(BanditError::Calibration("window must be positive".into()));
    }
    let mut env = env.clone();
    let mut adversary = Adversary::new(threat, seed)?;
    let mut out = EvalMetrics { episodes: Vec::with_capacity(episodes), selections: vec![0; models.len()] };
    for ep in 0..episodes {
        let mut clean = env.reset(derive_seed(seed, ep as u64))?.to_array();
        let mut pos = env.position();
        let mut clean_win: VecDeque<[f64; OBS_DIM]> = VecDeque::with_capacity(cfg.window);
        let mut seen_win: VecDeque<[f64; OBS_DIM]> = VecDeque::with_capacity(cfg.window);
        let mut m = EpisodeMetrics { episode: ep, reward: 0.0, conflicts: 0, steps: 0, path_length: 0.0, reached_goal: false };
        let mut live = 0;
        let mut episode_r = (0.0, 0usize);
        if let Selector::Switching { sampler, rng } = &mut selector {
            if cfg.per_episode {
                live = sampler.select(rng);
            }
        }
        loop {
            if let Selector::Switching { sampler, rng } = &mut selector {
                if !cfg.per_episode {
                    live = sampler.select(rng);
                }
            }
            let pair = models[live];
            let seen = adversary.observe(&env, &clean, pair)?;
            let step = env.step_normalized(&pair.act(&seen)?)?;
            out.selections[live] += 1;
            m.steps += 1;
            m.reward += step.reward;
            m.conflicts += step.conflict as usize;
            m.path_length += (step.position - pos).norm();
            m.reached_goal = step.reached_goal;
            pos = step.position;

            if let Selector::Switching { sampler, rng } = &mut selector {
                if clean_win.len() == cfg.window {
                    clean_win.pop_front();
                    seen_win.pop_front();
                }
                clean_win.push_back(clean);
                seen_win.push_back(seen);
                let r_tilde = if clean_win.len() < cfg.window {
                    calibration.expect("switching runs carry a calibration").p_true[live]
                } else {
                    online_p_true(models, rows(&clean_win).view(), rows(&seen_win).view(), cfg.k_mult)?[live]
                };
                if cfg.per_episode {
                    episode_r.0 += r_tilde;
                    episode_r.1 += 1;
                } else {
                    sampler.update(live, r_tilde, rng)?;
                }
            }
            clean = step.next_obs.to_array();
            if step.done {
                break;
            }
        }
        if let Selector::Switching { sampler, rng } = &mut selector {
            if cfg.per_episode {
                sampler.update(live, episode_r.0 / episode_r.1 as f64, rng)?;
            }
        }
        out.episodes.push(m);
    }
    Ok(out)
}

/// Rolls out one fixed policy, deployed through its agent head, under the threat.
pub fn evaluate_policy(
    env: &Environment,
    pair: &RobustPolicyPair,
    threat: &ThreatModel,
    episodes: usize,
    seed: u64,
) -> Result<EvalMetrics, BanditError> {
    run(&[pair], None, env, threat, Selector::Fixed, &DeployConfig::default(), episodes, seed)
}

/// Rolls out the ensemble with the sampler choosing the live policy.
///
/// Until the history window fills, the chosen model is rewarded at its
/// offline calibrated rate; afterwards at the rate recomputed on the window.
#[allow(clippy::too_many_arguments)]
pub fn deploy_switching(
    models: &[&RobustPolicyPair],
    calibration: &ShiftReport,
    env: &Environment,
    threat: &ThreatModel,
    kind: SamplerKind,
    cfg: &DeployConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalMetrics, BanditError> {
    if models.is_empty() {
        return Err(BanditError::NoArms);
    }
    if calibration.p_true.len() != models.len() {
        return Err(BanditError::Calibration(format!(
            "calibration covers {} models, ensemble has {}",
            calibration.p_true.len(),
            models.len()
        )));
    }
    let selector = Selector::Switching { sampler: kind.build(models.len())?, rng: stream(seed, Stream::Sampler) };
    run(models, Some(calibration), env, threat, selector, cfg, episodes, seed)
}
