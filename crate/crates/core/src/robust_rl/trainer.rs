use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::entropy::{entropy_gap, EntropyGapReport};
use super::pair::{critic_loss, critic_target, mixed_action, policy_gradients, Mode, PolicyGrads, RobustPolicyPair};
use super::replay::{Experience, ReplayBuffer};
use super::TrainError;
use crate::environment::{Environment, ACT_DIM, OBS_DIM};
use crate::neural::{soft_update, Adam, Mlp, Momentum, Optimizer, SgldNoise};
use crate::seeding::{derive_seed, stream, Rng, Stream};

/// Hyperparameters of every trainer. Defaults follow the paper-scale profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub explore_episodes: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub gamma: f64,
    /// Fraction of the online network blended into each target per update.
    pub target_update: f64,
    pub policy_lr: f64,
    pub policy_momentum: f64,
    pub critic_lr: f64,
    pub weight_decay: f64,
    /// Scale of the preconditioned gradient noise.
    pub noise_psi: f64,
    /// Decay of the noise statistics.
    pub noise_rho: f64,
    pub explore_noise_mean: f64,
    pub explore_noise_std: f64,
    /// Robustness update rate of the parameter averaging.
    pub beta: f64,
    /// Inner iterations per update.
    pub inner_iters: usize,
    pub entropy_bins: usize,
    pub entropy_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            explore_episodes: 30,
            buffer_capacity: 1_000_000,
            batch_size: 128,
            gamma: 0.99,
            target_update: 0.01,
            policy_lr: 0.01,
            policy_momentum: 0.9,
            critic_lr: 1e-3,
            weight_decay: 5e-4,
            noise_psi: 0.1,
            noise_rho: 0.99,
            explore_noise_mean: 0.05,
            explore_noise_std: 0.02,
            beta: 0.9,
            inner_iters: 1,
            entropy_bins: 16,
            entropy_window: 30,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: 50 episodes, 10 of them exploratory.
    pub fn fast() -> Self {
        Self { episodes: 50, explore_episodes: 10, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("buffer capacity must hold at least one minibatch");
        }
        if self.inner_iters == 0 {
            return bad("inner_iters must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.beta) {
            return bad("gamma and beta must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.target_update) || !(0.0..1.0).contains(&self.noise_rho) {
            return bad("target_update must lie in [0, 1] and noise_rho in [0, 1)");
        }
        if !(self.policy_lr > 0.0 && self.critic_lr > 0.0 && self.noise_psi >= 0.0 && self.explore_noise_std >= 0.0) {
            return bad("learning rates must be positive and noise scales non-negative");
        }
        if self.entropy_bins == 0 || self.entropy_window == 0 {
            return bad("entropy histogram needs bins and a window");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub conflicts: usize,
    pub reached_goal: bool,
    pub explored: bool,
}

/// One training run: networks, optimizers, noise state, buffer and generators.
pub struct Trainer {
    pair: RobustPolicyPair,
    config: TrainConfig,
    seed: u64,
    buffer: ReplayBuffer,
    critic_opt: Optimizer,
    agent_opt: Optimizer,
    adversary_opt: Optimizer,
    sgld_critic: SgldNoise,
    sgld_agent: SgldNoise,
    sgld_adversary: SgldNoise,
    rng_explore: Rng,
    rng_agent_noise: Rng,
    rng_adversary_noise: Rng,
    rng_replay: Rng,
    rng_sgld_critic: Rng,
    rng_sgld_agent: Rng,
    rng_sgld_adversary: Rng,
    rng_takeover: Rng,
    episode: usize,
    env_steps: u64,
    takeovers: u64,
    updates: u64,
    last_critic_loss: f64,
}

fn momentum(net: &Mlp, c: &TrainConfig) -> Optimizer {
    Optimizer::Momentum(Momentum::new(net.n_params(), c.policy_lr, c.policy_momentum, c.weight_decay))
}

fn lerp_into(dst: &mut [f64], src: &[f64], w: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (1.0 - w) * *d + w * s;
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl Trainer {
    pub fn new(mode: Mode, config: TrainConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let pair = RobustPolicyPair::new(mode, seed);
        let c = &config;
        Ok(Self {
            buffer: ReplayBuffer::new(c.buffer_capacity),
            critic_opt: Optimizer::Adam(Adam::new(pair.critic.n_params(), c.critic_lr, c.weight_decay)),
            agent_opt: momentum(&pair.agent, c),
            adversary_opt: momentum(&pair.adversary, c),
            sgld_critic: SgldNoise::new(pair.critic.n_params(), c.noise_rho, c.noise_psi),
            sgld_agent: SgldNoise::new(pair.agent.n_params(), c.noise_rho, c.noise_psi),
            sgld_adversary: SgldNoise::new(pair.adversary.n_params(), c.noise_rho, c.noise_psi),
            rng_explore: stream(seed, Stream::Explore),
            rng_agent_noise: stream(seed, Stream::AgentNoise),
            rng_adversary_noise: stream(seed, Stream::AdversaryNoise),
            rng_replay: stream(seed, Stream::Replay),
            rng_sgld_critic: stream(seed, Stream::SgldCritic),
            rng_sgld_agent: stream(seed, Stream::SgldAgent),
            rng_sgld_adversary: stream(seed, Stream::SgldAdversary),
            rng_takeover: stream(seed, Stream::Takeover),
            episode: 0,
            env_steps: 0,
            takeovers: 0,
            updates: 0,
            last_critic_loss: f64::NAN,
            pair,
            config,
            seed,
        })
    }

    pub fn pair(&self) -> &RobustPolicyPair {
        &self.pair
    }

    pub fn into_pair(self) -> RobustPolicyPair {
        self.pair
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Fraction of executed actions chosen wholly by the adversary.
    pub fn takeover_rate(&self) -> f64 {
        if self.env_steps == 0 {
            0.0
        } else {
            self.takeovers as f64 / self.env_steps as f64
        }
    }

    pub fn last_critic_loss(&self) -> f64 {
        self.last_critic_loss
    }

    fn head_action(net: &Mlp, obs: &[f64], explore: bool, mean: f64, std: f64, rng: &mut Rng) -> Result<Vec<f64>, TrainError> {
        if explore {
            return Ok((0..ACT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect());
        }
        let noise = Normal::new(mean, std).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        Ok(net.forward_one(obs)?.iter().map(|&a| (a + noise.sample(rng)).clamp(-1.0, 1.0)).collect())
    }

    /// Executed action in normalized units.
    fn select_action(&mut self, obs: &[f64], explore: bool) -> Result<Vec<f64>, TrainError> {
        let (m, s) = (self.config.explore_noise_mean, self.config.explore_noise_std);
        let rng = if explore { &mut self.rng_explore } else { &mut self.rng_agent_noise };
        let agent = Self::head_action(&self.pair.agent, obs, explore, m, s, rng)?;
        if !self.pair.mode.uses_adversary() {
            return Ok(agent);
        }
        let adv = Self::head_action(&self.pair.adversary, obs, explore, m, s, &mut self.rng_adversary_noise)?;
        Ok(match self.pair.mode {
            Mode::ProbabilisticRobust { alpha } => {
                if self.rng_takeover.random::<f64>() < alpha {
                    self.takeovers += 1;
                    adv
                } else {
                    agent
                }
            }
            _ => mixed_action(self.pair.alpha(), &agent, &adv),
        })
    }

    /// Observation stored for replay: clean, or pushed one sign step against the critic.
    fn stored_obs(&self, obs: &[f64; OBS_DIM]) -> Result<[f64; OBS_DIM], TrainError> {
        let Mode::AdversarialBuffer { epsilon } = self.pair.mode else {
            return Ok(*obs);
        };
        let view = ArrayView2::from_shape((1, OBS_DIM), obs).expect("row view");
        let (_, g) = self.pair.q_and_obs_grad(view)?;
        // The actor loss is -Q, so the ascent direction is -dQ/ds.
        Ok(std::array::from_fn(|j| obs[j] + epsilon * crate::attacks::sign(-g[[0, j]])))
    }

    /// Runs one episode, updating after every step once a minibatch is available.
    pub fn run_episode(&mut self, env: &mut Environment, step_budget: Option<usize>) -> Result<EpisodeStats, TrainError> {
        let explore = self.episode < self.config.explore_episodes;
        let mut obs = env.reset(derive_seed(self.seed, self.episode as u64))?.to_array();
        let mut stats = EpisodeStats {
            episode: self.episode,
            steps: 0,
            total_reward: 0.0,
            conflicts: 0,
            reached_goal: false,
            explored: explore,
        };
        loop {
            self.pair.obs_norm.update(&obs);
            let action = self.select_action(&obs, explore)?;
            let out = env.step_normalized(&action)?;
            let next = out.next_obs.to_array();
            let stored = self.stored_obs(&obs)?;
            self.buffer.push(Experience {
                obs: stored,
                action: std::array::from_fn(|i| action[i]),
                reward: out.reward,
                next_obs: next,
                done: out.reached_goal,
            });
            self.env_steps += 1;
            stats.steps += 1;
            stats.total_reward += out.reward;
            stats.conflicts += out.conflict as usize;
            stats.reached_goal = out.reached_goal;
            if !out.reward.is_finite() {
                return Err(self.divergence("non-finite reward"));
            }
            self.update()?;
            obs = next;
            if out.done || step_budget.is_some_and(|b| stats.steps >= b) {
                break;
            }
        }
        self.episode += 1;
        Ok(stats)
    }

    /// Runs exactly `n` environment steps, spanning episodes as needed.
    pub fn run_steps(&mut self, env: &mut Environment, n: usize) -> Result<Vec<EpisodeStats>, TrainError> {
        let mut left = n;
        let mut out = Vec::new();
        while left > 0 {
            let s = self.run_episode(env, Some(left))?;
            left -= s.steps;
            out.push(s);
        }
        Ok(out)
    }

    fn divergence(&self, what: &str) -> TrainError {
        TrainError::Divergence {
            episode: self.episode,
            step: self.env_steps,
            what: what.to_string(),
        }
    }

    fn step_agent(&mut self, grad: &[f64]) {
        let g = self.sgld_agent.perturb(grad, &mut self.rng_sgld_agent);
        self.agent_opt.step(self.pair.agent.params_mut(), &g);
    }

    fn step_adversary(&mut self, grad: &[f64]) {
        let g = self.sgld_adversary.perturb(grad, &mut self.rng_sgld_adversary);
        self.adversary_opt.step(self.pair.adversary.params_mut(), &g);
    }

    /// One block of noisy zero-sum updates with parameter averaging and target
    /// tracking. Returns `false` when the buffer cannot fill a minibatch yet.
    pub fn update(&mut self) -> Result<bool, TrainError> {
        if self.buffer.len() < self.config.batch_size {
            return Ok(false);
        }
        let beta = self.config.beta;
        let tau = self.config.target_update;
        let uses_adv = self.pair.mode.uses_adversary();
        let theta_t = self.pair.agent.params().to_vec();
        let omega_t = self.pair.adversary.params().to_vec();
        let mut theta_bar = theta_t.clone();
        let mut omega_bar = omega_t.clone();

        for _ in 0..self.config.inner_iters {
            let batch = self
                .buffer
                .sample(self.config.batch_size, &mut self.rng_replay)
                .expect("buffer holds a minibatch");

            let y = critic_target(&batch, &self.pair, self.config.gamma)?;
            let (loss, g) = critic_loss(&batch, &y, &self.pair.critic)?;
            if !loss.is_finite() {
                return Err(self.divergence("critic loss"));
            }
            self.last_critic_loss = loss;
            let g = self.sgld_critic.perturb(&g, &mut self.rng_sgld_critic);
            self.critic_opt.step(self.pair.critic.params_mut(), &g);

            match self.pair.mode {
                Mode::NoisyRobust { .. } | Mode::ProbabilisticRobust { .. } => {
                    let PolicyGrads { adversary, .. } = policy_gradients(&batch, &self.pair)?;
                    self.step_adversary(&adversary.expect("adversarial mode"));
                    let PolicyGrads { agent, .. } = policy_gradients(&batch, &self.pair)?;
                    self.step_agent(&agent);
                }
                _ => {
                    let PolicyGrads { agent, adversary } = policy_gradients(&batch, &self.pair)?;
                    self.step_agent(&agent);
                    if let Some(gv) = adversary {
                        self.step_adversary(&gv);
                    }
                }
            }

            lerp_into(&mut theta_bar, self.pair.agent.params(), beta);
            soft_update(&mut self.pair.critic_targ, &self.pair.critic, tau)?;
            soft_update(&mut self.pair.agent_targ, &self.pair.agent, tau)?;
            if uses_adv {
                lerp_into(&mut omega_bar, self.pair.adversary.params(), beta);
                soft_update(&mut self.pair.adversary_targ, &self.pair.adversary, tau)?;
            }
        }

        let mut theta_next = theta_t;
        lerp_into(&mut theta_next, &theta_bar, beta);
        self.pair.agent.set_params(&theta_next)?;
        if uses_adv {
            let mut omega_next = omega_t;
            lerp_into(&mut omega_next, &omega_bar, beta);
            self.pair.adversary.set_params(&omega_next)?;
        }
        if !all_finite(self.pair.agent.params()) || !all_finite(self.pair.critic.params()) {
            return Err(self.divergence("network parameters"));
        }
        self.updates += 1;
        Ok(true)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub pair: RobustPolicyPair,
    pub episodes: Vec<EpisodeStats>,
    pub entropy: EntropyGapReport,
    pub takeover_rate: f64,
}

impl TrainOutcome {
    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.total_reward).collect()
    }
}

/// Full training run: exploration episodes, then noisy exploitation, then the entropy gap.
pub fn train(env: &mut Environment, mode: Mode, config: &TrainConfig, seed: u64) -> Result<TrainOutcome, TrainError> {
    if config.explore_episodes == 0 || config.explore_episodes >= config.episodes {
        return Err(TrainError::InvalidConfig(
            "need at least one exploration and one exploitation episode".into(),
        ));
    }
    let mut trainer = Trainer::new(mode, config.clone(), seed)?;
    let mut episodes = Vec::with_capacity(config.episodes);
    for _ in 0..config.episodes {
        episodes.push(trainer.run_episode(env, None)?);
    }
    let rewards: Vec<f64> = episodes.iter().map(|e| e.total_reward).collect();
    let (explore, exploit) = rewards.split_at(config.explore_episodes);
    let entropy = entropy_gap(explore, exploit, config.entropy_bins, config.entropy_window);
    let takeover_rate = trainer.takeover_rate();
    Ok(TrainOutcome { pair: trainer.into_pair(), episodes, entropy, takeover_rate })
}

/// Shorthand for [`train`] with [`Mode::ActionRobust`].
pub fn train_action_robust(env: &mut Environment, alpha: f64, config: &TrainConfig, seed: u64) -> Result<TrainOutcome, TrainError> {
    train(env, Mode::ActionRobust { alpha }, config, seed)
}

pub fn train_pr_mdp(env: &mut Environment, alpha: f64, config: &TrainConfig, seed: u64) -> Result<TrainOutcome, TrainError> {
    train(env, Mode::ProbabilisticRobust { alpha }, config, seed)
}

pub fn train_nr_mdp(env: &mut Environment, alpha: f64, config: &TrainConfig, seed: u64) -> Result<TrainOutcome, TrainError> {
    train(env, Mode::NoisyRobust { alpha }, config, seed)
}

pub fn train_adversarial_ddpg(env: &mut Environment, epsilon: f64, config: &TrainConfig, seed: u64) -> Result<TrainOutcome, TrainError> {
    train(env, Mode::AdversarialBuffer { epsilon }, config, seed)
}

/// Stack of observation rows.
pub fn obs_matrix(rows: &[[f64; OBS_DIM]]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), OBS_DIM), |(i, j)| rows[i][j])
}
