use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::replay::Batch;
use crate::environment::{ACT_DIM, OBS_DIM};
use crate::neural::{concat_cols, Mlp, NnError, RunningNorm};
use crate::seeding::{stream, Stream};

/// Which perturbation a trainer applies, with its strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Vanilla,
    /// Mixed action, agent and adversary updated from the same critic snapshot.
    ActionRobust { alpha: f64 },
    /// Mixed action, adversary updated before the agent.
    NoisyRobust { alpha: f64 },
    /// The adversary takes over the whole action with probability `alpha`.
    ProbabilisticRobust { alpha: f64 },
    /// Stores sign-gradient perturbed observations in the replay buffer.
    AdversarialBuffer { epsilon: f64 },
}

impl Mode {
    pub fn alpha(&self) -> f64 {
        match *self {
            Mode::ActionRobust { alpha } | Mode::NoisyRobust { alpha } | Mode::ProbabilisticRobust { alpha } => alpha,
            Mode::Vanilla | Mode::AdversarialBuffer { .. } => 0.0,
        }
    }

    pub fn uses_adversary(&self) -> bool {
        matches!(self, Mode::ActionRobust { .. } | Mode::NoisyRobust { .. } | Mode::ProbabilisticRobust { .. })
    }

    pub fn label(&self) -> String {
        match *self {
            Mode::Vanilla => "vanilla".into(),
            Mode::ActionRobust { alpha } => format!("ar_{alpha:.2}"),
            Mode::NoisyRobust { alpha } => format!("nr_{alpha:.2}"),
            Mode::ProbabilisticRobust { alpha } => format!("pr_{alpha:.2}"),
            Mode::AdversarialBuffer { epsilon } => format!("adv_{epsilon:.2}"),
        }
    }
}

/// `alpha * adversary + (1 - alpha) * agent`.
pub fn mixed_action(alpha: f64, agent: &[f64], adversary: &[f64]) -> Vec<f64> {
    agent.iter().zip(adversary).map(|(&a, &v)| alpha * v + (1.0 - alpha) * a).collect()
}

fn mix_batch(alpha: f64, agent: &Array2<f64>, adversary: &Array2<f64>) -> Array2<f64> {
    let mut out = adversary * alpha;
    out.zip_mut_with(agent, |o, &a| *o += (1.0 - alpha) * a);
    out
}

/// Agent policy, adversary policy and the joint critic, each with a target copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustPolicyPair {
    pub mode: Mode,
    pub agent: Mlp,
    pub adversary: Mlp,
    pub critic: Mlp,
    pub agent_targ: Mlp,
    pub adversary_targ: Mlp,
    pub critic_targ: Mlp,
    /// Observation statistics gathered during training; attacks measure budgets in these units.
    pub obs_norm: RunningNorm,
}

impl RobustPolicyPair {
    pub fn new(mode: Mode, seed: u64) -> Self {
        let agent = Mlp::policy(OBS_DIM, ACT_DIM, &mut stream(seed, Stream::AgentInit));
        let adversary = Mlp::policy(OBS_DIM, ACT_DIM, &mut stream(seed, Stream::AdversaryInit));
        let critic = Mlp::critic(OBS_DIM + ACT_DIM, &mut stream(seed, Stream::CriticInit));
        Self {
            mode,
            agent_targ: agent.clone(),
            adversary_targ: adversary.clone(),
            critic_targ: critic.clone(),
            agent,
            adversary,
            critic,
            obs_norm: RunningNorm::new(OBS_DIM),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.mode.alpha()
    }

    /// Deployed action: the agent head alone, in normalized units.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>, NnError> {
        self.agent.forward_one(obs)
    }

    /// Training-time action `alpha * nu + (1 - alpha) * mu` for a batch of observations.
    pub fn mixed_actions(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        let mu = self.agent.forward(obs)?;
        if !self.mode.uses_adversary() {
            return Ok(mu);
        }
        let nu = self.adversary.forward(obs)?;
        Ok(mix_batch(self.alpha(), &mu, &nu))
    }

    pub fn q(&self, obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>, NnError> {
        let x = concat_cols(obs, actions);
        Ok(self.critic.forward(x.view())?.column(0).to_owned())
    }

    /// `Q(s, mixed(s))` with both heads evaluated at `s`.
    pub fn q_values(&self, obs: ArrayView2<f64>) -> Result<Array1<f64>, NnError> {
        let a = self.mixed_actions(obs)?;
        self.q(obs, a.view())
    }

    /// `Q(s, mixed(s))` and its total derivative with respect to `s`.
    pub fn q_and_obs_grad(&self, obs: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>), NnError> {
        self.value_and_obs_grad(obs, true)
    }

    /// `Q(s, mu(s))` through the agent head alone, as deployed, with its derivative.
    pub fn deployed_q_and_obs_grad(&self, obs: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>), NnError> {
        self.value_and_obs_grad(obs, false)
    }

    fn value_and_obs_grad(&self, obs: ArrayView2<f64>, mixed: bool) -> Result<(Array1<f64>, Array2<f64>), NnError> {
        let alpha = self.alpha();
        let mu_t = self.agent.forward_trace(obs)?;
        let nu_t = if mixed && self.mode.uses_adversary() { Some(self.adversary.forward_trace(obs)?) } else { None };
        let a = match &nu_t {
            Some(nu) => mix_batch(alpha, mu_t.output(), nu.output()),
            None => mu_t.output().clone(),
        };
        let x = concat_cols(obs, a.view());
        let ct = self.critic.forward_trace(x.view())?;
        let q = ct.output().column(0).to_owned();
        let ones = Array2::ones((obs.nrows(), 1));
        let gx = self.critic.backward_input(&ct, ones.view());
        let mut g_obs = gx.slice(s![.., ..OBS_DIM]).to_owned();
        let g_act = gx.slice(s![.., OBS_DIM..]).to_owned();
        match &nu_t {
            Some(nu) => {
                g_obs += &self.agent.backward_input(&mu_t, (&g_act * (1.0 - alpha)).view());
                g_obs += &self.adversary.backward_input(nu, (&g_act * alpha).view());
            }
            None => g_obs += &self.agent.backward_input(&mu_t, g_act.view()),
        }
        Ok((q, g_obs))
    }
}

/// `y = r + gamma (1 - done) Q_targ(s', a')` with the target heads choosing `a'`.
///
/// The probabilistic mode mixes the two target values instead of the actions.
pub fn critic_target(batch: &Batch, pair: &RobustPolicyPair, gamma: f64) -> Result<Array1<f64>, NnError> {
    let next = batch.next_obs.view();
    let mu = pair.agent_targ.forward(next)?;
    let q_next = match pair.mode {
        Mode::Vanilla | Mode::AdversarialBuffer { .. } => q_target(pair, next, &mu)?,
        Mode::ActionRobust { alpha } | Mode::NoisyRobust { alpha } => {
            let nu = pair.adversary_targ.forward(next)?;
            q_target(pair, next, &mix_batch(alpha, &mu, &nu))?
        }
        Mode::ProbabilisticRobust { alpha } => {
            let nu = pair.adversary_targ.forward(next)?;
            let qa = q_target(pair, next, &mu)?;
            let qv = q_target(pair, next, &nu)?;
            qa * (1.0 - alpha) + qv * alpha
        }
    };
    let mut y = q_next;
    y.zip_mut_with(&batch.done, |q, &d| *q *= gamma * (1.0 - d));
    Ok(y + &batch.rewards)
}

fn q_target(pair: &RobustPolicyPair, obs: ArrayView2<f64>, a: &Array2<f64>) -> Result<Array1<f64>, NnError> {
    let x = concat_cols(obs, a.view());
    Ok(pair.critic_targ.forward(x.view())?.column(0).to_owned())
}

/// Mean squared Bellman error and its parameter gradient.
pub fn critic_loss(batch: &Batch, targets: &Array1<f64>, critic: &Mlp) -> Result<(f64, Vec<f64>), NnError> {
    let x = concat_cols(batch.obs.view(), batch.actions.view());
    let t = critic.forward_trace(x.view())?;
    let diff = &t.output().column(0) - targets;
    let n = batch.len() as f64;
    let loss = diff.mapv(|d| d * d).sum() / n;
    let g_out = (diff * (2.0 / n)).insert_axis(Axis(1));
    let (g, _) = critic.backward(&t, g_out.view());
    Ok((loss, g))
}

/// Descent directions for the two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    /// Gradient of `-J` with respect to the agent parameters.
    pub agent: Vec<f64>,
    /// Gradient of `J` with respect to the adversary parameters; `None` without an adversary.
    pub adversary: Option<Vec<f64>>,
}

fn critic_action_grad(critic: &Mlp, obs: ArrayView2<f64>, a: &Array2<f64>) -> Result<Array2<f64>, NnError> {
    let x = concat_cols(obs, a.view());
    let t = critic.forward_trace(x.view())?;
    let ones = Array2::ones((obs.nrows(), 1));
    Ok(critic.backward_input(&t, ones.view()).slice(s![.., OBS_DIM..]).to_owned())
}

/// Chain rule through the critic: agent scaled by `1 - alpha`, adversary by `alpha`.
///
/// Mixed modes differentiate at the mixed action; the probabilistic mode
/// differentiates each head at its own action.
pub fn policy_gradients(batch: &Batch, pair: &RobustPolicyPair) -> Result<PolicyGrads, NnError> {
    let obs = batch.obs.view();
    let n = batch.len() as f64;
    let alpha = pair.alpha();
    let mu_t = pair.agent.forward_trace(obs)?;
    if !pair.mode.uses_adversary() {
        let dq = critic_action_grad(&pair.critic, obs, mu_t.output())?;
        let (g, _) = pair.agent.backward(&mu_t, (dq * (-(1.0 - alpha) / n)).view());
        return Ok(PolicyGrads { agent: g, adversary: None });
    }
    let nu_t = pair.adversary.forward_trace(obs)?;
    let (dq_agent, dq_adv) = match pair.mode {
        Mode::ProbabilisticRobust { .. } => (
            critic_action_grad(&pair.critic, obs, mu_t.output())?,
            critic_action_grad(&pair.critic, obs, nu_t.output())?,
        ),
        _ => {
            let dq = critic_action_grad(&pair.critic, obs, &mix_batch(alpha, mu_t.output(), nu_t.output()))?;
            (dq.clone(), dq)
        }
    };
    let (ga, _) = pair.agent.backward(&mu_t, (dq_agent * (-(1.0 - alpha) / n)).view());
    let (gv, _) = pair.adversary.backward(&nu_t, (dq_adv * (alpha / n)).view());
    Ok(PolicyGrads { agent: ga, adversary: Some(gv) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Activation;
    use crate::robust_rl::replay::Experience;
    use approx::assert_relative_eq;

    fn batch(n: usize, reward: f64, done: bool) -> Batch {
        let items: Vec<Experience> = (0..n)
            .map(|i| Experience {
                obs: [0.1 * i as f64; OBS_DIM],
                action: [0.2; ACT_DIM],
                reward,
                next_obs: [0.3; OBS_DIM],
                done,
            })
            .collect();
        let refs: Vec<&Experience> = items.iter().collect();
        Batch::from_experiences(&refs)
    }

    #[test]
    fn mixed_action_examples() {
        let ag = [1.0, 1.0, 1.0];
        let adv = [-1.0, -1.0, -1.0];
        assert_eq!(mixed_action(0.0, &ag, &adv), ag.to_vec());
        assert_eq!(mixed_action(1.0, &ag, &adv), adv.to_vec());
        for v in mixed_action(0.3, &ag, &adv) {
            assert_relative_eq!(v, 0.4, epsilon = 1e-15);
        }
    }

    fn constant_critic(pair: &mut RobustPolicyPair, value: f64) {
        let mut c = Mlp::zeros(&[OBS_DIM + ACT_DIM, 4, 1], Activation::Relu, Activation::Identity);
        let n = c.n_params();
        c.params_mut()[n - 1] = value;
        pair.critic_targ = c.clone();
        pair.critic = c;
    }

    #[test]
    fn critic_target_examples() {
        let mut pair = RobustPolicyPair::new(Mode::ActionRobust { alpha: 0.3 }, 1);
        constant_critic(&mut pair, 2.0);
        let y = critic_target(&batch(3, 1.0, true), &pair, 0.99).unwrap();
        assert!(y.iter().all(|&v| v == 1.0));
        let y = critic_target(&batch(3, 1.0, false), &pair, 0.0).unwrap();
        assert!(y.iter().all(|&v| v == 1.0));
        let y = critic_target(&batch(3, 1.0, false), &pair, 0.99).unwrap();
        assert!(y.iter().all(|&v| (v - 2.98).abs() < 1e-12));
    }

    #[test]
    fn critic_loss_examples() {
        let mut pair = RobustPolicyPair::new(Mode::Vanilla, 1);
        constant_critic(&mut pair, 0.0);
        let b = batch(1, 0.0, false);
        let (l, _) = critic_loss(&b, &Array1::from(vec![0.0]), &pair.critic).unwrap();
        assert_eq!(l, 0.0);
        let (l, _) = critic_loss(&b, &Array1::from(vec![1.0]), &pair.critic).unwrap();
        assert_eq!(l, 1.0);
        let b2 = batch(2, 0.0, false);
        let (l, _) = critic_loss(&b2, &Array1::from(vec![1.0, -1.0]), &pair.critic).unwrap();
        assert_eq!(l, 1.0);
    }

    #[test]
    fn prefactors_silence_heads() {
        let b = batch(8, 0.0, false);
        let pair = RobustPolicyPair::new(Mode::ActionRobust { alpha: 0.0 }, 2);
        let g = policy_gradients(&b, &pair).unwrap();
        assert!(g.adversary.unwrap().iter().all(|&v| v == 0.0));
        assert!(g.agent.iter().any(|&v| v != 0.0));
        let pair = RobustPolicyPair::new(Mode::ActionRobust { alpha: 1.0 }, 2);
        let g = policy_gradients(&b, &pair).unwrap();
        assert!(g.agent.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_dimensional_quadratic_critic() {
        // Q(a) = -(a - 2)^2 with a linear policy mu(s) = w s + b:
        // dJ/dw = mean(-2 (mu - 2) s), dJ/db = mean(-2 (mu - 2)).
        let mut policy = Mlp::zeros(&[1, 1], Activation::Identity, Activation::Identity);
        policy.set_params(&[0.5, 0.25]).unwrap();
        let s = ndarray::array![[1.0], [2.0], [-1.0]];
        let t = policy.forward_trace(s.view()).unwrap();
        let dq = t.output().column(0).mapv(|m| -2.0 * (m - 2.0));
        let n = 3.0;
        let (g, _) = policy.backward(&t, (dq.clone().insert_axis(Axis(1)) * (-1.0 / n)).view());
        let dw: f64 = dq.iter().zip(s.column(0)).map(|(d, x)| d * x).sum::<f64>() / n;
        let db: f64 = dq.sum() / n;
        assert_relative_eq!(g[0], -dw, epsilon = 1e-14);
        assert_relative_eq!(g[1], -db, epsilon = 1e-14);
    }

    #[test]
    fn linear_critic_policy_gradient() {
        // Q(s, a) = c . a makes dJ/dtheta = mean over the batch of c . dmu/dtheta.
        let mut pair = RobustPolicyPair::new(Mode::Vanilla, 3);
        let c = [0.5, -1.0, 2.0];
        let mut critic = Mlp::zeros(&[OBS_DIM + ACT_DIM, 1], Activation::Relu, Activation::Identity);
        critic.params_mut()[OBS_DIM..OBS_DIM + ACT_DIM].copy_from_slice(&c);
        pair.critic = critic;
        let b = batch(4, 0.0, false);
        let g = policy_gradients(&b, &pair).unwrap();
        let t = pair.agent.forward_trace(b.obs.view()).unwrap();
        let proj = Array2::from_shape_fn((4, ACT_DIM), |(_, j)| -c[j] / 4.0);
        let (expected, _) = pair.agent.backward(&t, proj.view());
        for (a, e) in g.agent.iter().zip(&expected) {
            assert_relative_eq!(a, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn obs_gradient_matches_finite_differences() {
        let pair = RobustPolicyPair::new(Mode::ActionRobust { alpha: 0.3 }, 4);
        let obs = Array2::from_shape_fn((2, OBS_DIM), |(i, j)| 0.3 * i as f64 - 0.2 * j as f64 + 0.1);
        let (_, g) = pair.q_and_obs_grad(obs.view()).unwrap();
        let h = 1e-5;
        for j in 0..OBS_DIM {
            let mut up = obs.clone();
            up[[0, j]] += h;
            let mut dn = obs.clone();
            dn[[0, j]] -= h;
            let fd = (pair.q_values(up.view()).unwrap()[0] - pair.q_values(dn.view()).unwrap()[0]) / (2.0 * h);
            assert!((fd - g[[0, j]]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
    }
}
