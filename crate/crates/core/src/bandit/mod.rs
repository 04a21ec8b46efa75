//! Policy selection as a nonstationary Bernoulli bandit: discounted Thompson
//! sampling and its ablations, reward schedules with regret traces, and
//! online switching over a trained ensemble.

mod deploy;
mod sampler;
mod schedule;

use thiserror::Error;

use crate::attacks::AttackError;
use crate::environment::EnvError;
use crate::neural::NnError;
use crate::shift::ShiftError;

pub use deploy::{deploy_switching, evaluate_policy, online_p_true, DeployConfig, EpisodeMetrics, EvalMetrics, ThreatModel};
pub use sampler::{argmax, bernoulli, dts_select, dts_update, BetaArm, Sampler, SamplerKind};
pub use schedule::{mean_cumulative, run_many, run_switching, RegretTrace, RewardSchedule, Segment};

#[derive(Debug, Error)]
pub enum BanditError {
    #[error("sampler needs at least one arm")]
    NoArms,
    #[error("arm {0} out of range")]
    ArmOutOfRange(usize),
    #[error("reward rate {0} outside [0, 1]")]
    RewardOutOfRange(f64),
    #[error("discount must lie in (0, 1], got {0}")]
    InvalidDiscount(f64),
    #[error("exploration rate must lie in [0, 1], got {0}")]
    InvalidEpsilon(f64),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("calibration mismatch: {0}")]
    Calibration(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Shift(#[from] ShiftError),
    #[error(transparent)]
    Nn(#[from] NnError),
}
