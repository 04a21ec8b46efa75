//! Antifragile policy switching for UAV deconfliction.
//!
//! The crate covers the whole pipeline: an IFDS flow-field environment,
//! action-robust DDPG training with SGLD noise, gradient-based observation
//! attacks, Wasserstein value-shift calibration and discounted Thompson
//! sampling over the resulting policy ensemble.

pub mod attacks;
pub mod bandit;
pub mod environment;
pub mod flowfield;
pub mod harness;
pub mod neural;
pub mod robust_rl;
pub mod seeding;
pub mod shift;

pub use environment::{AgentObs, Environment, Scenario, StepOutcome};
pub use flowfield::{IfdsParams, ObstacleKinematics, ObstacleShape, Vec3};
pub use harness::{ExperimentConfig, HarnessError as Error, Profile};
pub use robust_rl::{EnsembleConfig, EnsembleSet, Mode, RobustPolicyPair, TrainConfig, TrainError};
pub use attacks::{AttackConfig, AttackKind};
pub use bandit::{RewardSchedule, Sampler, SamplerKind};
pub use shift::{wasserstein1, ShiftReport};
