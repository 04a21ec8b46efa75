//! DDPG and its adversarial variants: action-robust zero-sum training with
//! noisy gradients, probabilistic and noisy robust baselines, adversarial
//! replay, and the entropy-gap ensemble builder.

mod ensemble;
mod entropy;
mod pair;
mod replay;
mod trainer;

use thiserror::Error;

use crate::environment::EnvError;
use crate::neural::NnError;

pub use ensemble::{build_ensemble, EnsembleConfig, EnsembleMember, EnsembleSet};
pub use entropy::{entropy_gap, histogram_entropy, EntropyGapReport};
pub use pair::{critic_loss, critic_target, mixed_action, policy_gradients, Mode, PolicyGrads, RobustPolicyPair};
pub use replay::{Batch, Experience, ReplayBuffer};
pub use trainer::{
    obs_matrix, train, train_action_robust, train_adversarial_ddpg, train_nr_mdp, train_pr_mdp, EpisodeStats,
    TrainConfig, TrainOutcome, Trainer,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at episode {episode}, step {step}: {what} is not finite")]
    Divergence { episode: usize, step: u64, what: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no member cleared the entropy-gap threshold {threshold}")]
    EmptyEnsemble { threshold: f64 },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
}
