use serde::{Deserialize, Serialize};

use super::entropy::EntropyGapReport;
use super::pair::{Mode, RobustPolicyPair};
use super::trainer::{train, EpisodeStats, TrainConfig};
use super::TrainError;
use crate::environment::Environment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub train: TrainConfig,
    /// Members are appended while their entropy gap exceeds this many bits.
    pub delta_h_threshold: f64,
    pub alpha_start: f64,
    pub alpha_step: f64,
    /// Cap on the number of robust members.
    pub max_members: usize,
    /// Train exactly the `alpha_start + k * alpha_step` grid up to the cap, ignoring the threshold.
    pub pin_grid: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            delta_h_threshold: 0.5,
            alpha_start: 0.1,
            alpha_step: 0.1,
            max_members: 4,
            pin_grid: true,
        }
    }
}

impl EnsembleConfig {
    pub fn alpha(&self, k: usize) -> f64 {
        // Rounded so the grid prints as 0.1, 0.2, ... rather than accumulating error.
        ((self.alpha_start + k as f64 * self.alpha_step) * 1e9).round() / 1e9
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.train.validate()?;
        if !(self.alpha_step > 0.0) || !(0.0..=1.0).contains(&self.alpha_start) || self.max_members == 0 {
            return Err(TrainError::InvalidConfig("alpha grid must start in [0, 1] and step upward".into()));
        }
        if self.alpha(self.max_members - 1) > 1.0 {
            return Err(TrainError::InvalidConfig("alpha grid leaves [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub alpha: f64,
    pub pair: RobustPolicyPair,
    pub entropy: EntropyGapReport,
    pub episodes: Vec<EpisodeStats>,
}

/// Vanilla policy at index 0 followed by action-robust members in increasing `alpha`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSet {
    pub members: Vec<EnsembleMember>,
}

impl EnsembleSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.alpha).collect()
    }

    pub fn vanilla(&self) -> &EnsembleMember {
        &self.members[0]
    }

    pub fn robust(&self) -> &[EnsembleMember] {
        &self.members[1..]
    }

    pub fn pairs(&self) -> Vec<&RobustPolicyPair> {
        self.members.iter().map(|m| &m.pair).collect()
    }
}

fn member(env: &Environment, mode: Mode, cfg: &TrainConfig, seed: u64) -> Result<EnsembleMember, TrainError> {
    let mut env = env.clone();
    let out = train(&mut env, mode, cfg, seed)?;
    Ok(EnsembleMember { alpha: mode.alpha(), entropy: out.entropy, episodes: out.episodes, pair: out.pair })
}

/// Trains the vanilla reference, then action-robust members at increasing `alpha`
/// while the entropy gap stays above the threshold.
pub fn build_ensemble(env: &Environment, config: &EnsembleConfig, seed: u64) -> Result<EnsembleSet, TrainError> {
    config.validate()?;
    let mut robust = Vec::new();
    for k in 0..config.max_members {
        let m = member(env, Mode::ActionRobust { alpha: config.alpha(k) }, &config.train, seed)?;
        let keep = config.pin_grid || m.entropy.delta_h > config.delta_h_threshold;
        if !keep {
            break;
        }
        robust.push(m);
    }
    if robust.is_empty() {
        return Err(TrainError::EmptyEnsemble { threshold: config.delta_h_threshold });
    }
    let mut members = vec![member(env, Mode::Vanilla, &config.train, seed)?];
    members.extend(robust);
    Ok(EnsembleSet { members })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Scenario;

    fn tiny() -> EnsembleConfig {
        let train = TrainConfig { episodes: 3, explore_episodes: 1, batch_size: 8, entropy_window: 2, ..TrainConfig::default() };
        EnsembleConfig { train, ..EnsembleConfig::default() }
    }

    fn short_env() -> Environment {
        let mut s = Scenario::open();
        s.episode.max_steps = 6;
        Environment::new(s).unwrap()
    }

    #[test]
    fn grid_is_rounded() {
        let c = EnsembleConfig::default();
        assert_eq!((0..4).map(|k| c.alpha(k)).collect::<Vec<_>>(), vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn pinned_grid_yields_vanilla_plus_four() {
        let set = build_ensemble(&short_env(), &tiny(), 3).unwrap();
        assert_eq!(set.alphas(), vec![0.0, 0.1, 0.2, 0.3, 0.4]);
        assert!(set.alphas().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(set.vanilla().pair.mode, Mode::Vanilla);
    }

    #[test]
    fn infinite_threshold_is_an_error() {
        let cfg = EnsembleConfig { delta_h_threshold: f64::INFINITY, pin_grid: false, ..tiny() };
        assert!(matches!(build_ensemble(&short_env(), &cfg, 0), Err(TrainError::EmptyEnsemble { .. })));
    }

    #[test]
    fn negative_infinite_threshold_fills_the_cap() {
        let cfg = EnsembleConfig { delta_h_threshold: f64::NEG_INFINITY, pin_grid: false, max_members: 2, ..tiny() };
        assert_eq!(build_ensemble(&short_env(), &cfg, 0).unwrap().alphas(), vec![0.0, 0.1, 0.2]);
    }
}
