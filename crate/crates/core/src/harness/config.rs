use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::attacks::{AttackConfig, AttackKind};
use crate::bandit::{DeployConfig, RewardSchedule, SamplerKind};
use crate::environment::Scenario;
use crate::robust_rl::{EnsembleConfig, TrainConfig};
use crate::shift::{ReferenceMode, DEFAULT_PROBE_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Fast,
    Paper,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "fast" => Ok(Profile::Fast),
            "paper" => Ok(Profile::Paper),
            other => Err(HarnessError::Config(format!("unknown profile {other:?}, expected fast or paper"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Profile::Fast => "fast",
            Profile::Paper => "paper",
        }
    }

    pub fn train_config(self) -> TrainConfig {
        match self {
            Profile::Fast => TrainConfig::fast(),
            Profile::Paper => TrainConfig::default(),
        }
    }
}

/// Bundled scenario name or a path to a scenario JSON file.
pub fn resolve_scenario(name: &str, base: Option<&Path>) -> Result<Scenario, HarnessError> {
    match name {
        "training" => Ok(Scenario::training()),
        "testing" => Ok(Scenario::testing()),
        "open" => Ok(Scenario::open()),
        path => {
            let p = match base {
                Some(b) if Path::new(path).is_relative() => b.join(path),
                _ => PathBuf::from(path),
            };
            Scenario::load(&p).map_err(|e| HarnessError::Config(format!("scenario {}: {e}", p.display())))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub enabled: bool,
    pub nr_alpha: f64,
    pub pr_alpha: f64,
    pub adversarial_epsilon: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { enabled: true, nr_alpha: 0.1, pr_alpha: 0.1, adversarial_epsilon: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub attack: AttackKind,
    pub epsilons: Vec<f64>,
    pub probe_size: usize,
    pub k_mult: f64,
    pub reference: ReferenceMode,
    /// Steps per budget level when the calibration is replayed as a bandit schedule.
    pub steps_per_level: usize,
    #[serde(rename = "attack_params")]
    pub attack_config: AttackConfig,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            attack: AttackKind::FrankWolfe,
            epsilons: vec![0.5, 1.0, 1.5, 2.0, 2.5],
            probe_size: DEFAULT_PROBE_SIZE,
            k_mult: 0.9,
            reference: ReferenceMode::VanillaClean,
            steps_per_level: 800,
            attack_config: AttackConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub attack: AttackKind,
    pub epsilon: f64,
    pub episodes: usize,
    pub samplers: Vec<SamplerKind>,
    pub baselines: bool,
    #[serde(rename = "attack_params")]
    pub attack_config: AttackConfig,
    pub deploy: DeployConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            attack: AttackKind::Pgd,
            epsilon: 2.5,
            episodes: 100,
            samplers: vec![
                SamplerKind::Dts { discount: 0.8 },
                SamplerKind::Ts,
                SamplerKind::EpsGreedy { epsilon: 0.1 },
                SamplerKind::Ucb,
            ],
            baselines: true,
            attack_config: AttackConfig::default(),
            deploy: DeployConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditSimConfig {
    /// Schedule file; the bundled canonical schedule when absent.
    pub schedule: Option<PathBuf>,
    pub samplers: Vec<SamplerKind>,
    pub runs: usize,
    /// Horizon; the schedule length when absent.
    pub steps: Option<usize>,
}

impl Default for BanditSimConfig {
    fn default() -> Self {
        Self { schedule: None, samplers: EvalConfig::default().samplers, runs: 100, steps: None }
    }
}

/// Ensemble options other than the per-run training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub delta_h_threshold: f64,
    pub alpha_start: f64,
    pub alpha_step: f64,
    pub max_members: usize,
    pub pin_grid: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        let e = EnsembleConfig::default();
        Self {
            delta_h_threshold: e.delta_h_threshold,
            alpha_start: e.alpha_start,
            alpha_step: e.alpha_step,
            max_members: e.max_members,
            pin_grid: e.pin_grid,
        }
    }
}

/// Raw file layout. Training fields left out fall back to the selected profile.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    scenario: Option<String>,
    eval_scenario: Option<String>,
    n_seeds: Option<usize>,
    train: toml::Table,
    ensemble: GridConfig,
    baselines: BaselineConfig,
    calibration: CalibrationConfig,
    eval: EvalConfig,
    bandit: BanditSimConfig,
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub scenario: String,
    pub eval_scenario: String,
    pub n_seeds: usize,
    pub train: TrainConfig,
    pub ensemble: GridConfig,
    pub baselines: BaselineConfig,
    pub calibration: CalibrationConfig,
    pub eval: EvalConfig,
    pub bandit: BanditSimConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, profile: Profile) -> Result<Self, HarnessError> {
        Self::parse(text, profile, None)
    }

    fn parse(text: &str, profile: Profile, base_dir: Option<PathBuf>) -> Result<Self, HarnessError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut train = toml::Table::try_from(profile.train_config()).expect("config serializes");
        train.extend(raw.train);
        let train: TrainConfig = train.try_into().map_err(|e: toml::de::Error| HarnessError::Config(format!("[train]: {e}")))?;
        let cfg = Self {
            profile,
            scenario: raw.scenario.unwrap_or_else(|| "training".into()),
            eval_scenario: raw.eval_scenario.unwrap_or_else(|| "testing".into()),
            n_seeds: raw.n_seeds.unwrap_or(1),
            train,
            ensemble: raw.ensemble,
            baselines: raw.baselines,
            calibration: raw.calibration,
            eval: raw.eval,
            bandit: raw.bandit,
            base_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile: Profile) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, profile, path.parent().map(Path::to_path_buf))
    }

    /// Defaults for the given profile.
    pub fn for_profile(profile: Profile) -> Self {
        Self::from_toml_str("", profile).expect("defaults are valid")
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        let g = &self.ensemble;
        EnsembleConfig {
            train: self.train.clone(),
            delta_h_threshold: g.delta_h_threshold,
            alpha_start: g.alpha_start,
            alpha_step: g.alpha_step,
            max_members: g.max_members,
            pin_grid: g.pin_grid,
        }
    }

    pub fn training_scenario(&self) -> Result<Scenario, HarnessError> {
        resolve_scenario(&self.scenario, self.base_dir.as_deref())
    }

    pub fn evaluation_scenario(&self) -> Result<Scenario, HarnessError> {
        resolve_scenario(&self.eval_scenario, self.base_dir.as_deref())
    }

    pub fn bandit_schedule(&self) -> Result<RewardSchedule, HarnessError> {
        match &self.bandit.schedule {
            None => Ok(RewardSchedule::canonical()),
            Some(p) => {
                let p = match &self.base_dir {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                RewardSchedule::load(&p).map_err(|e| HarnessError::Config(format!("bandit.schedule: {e}")))
            }
        }
    }

    pub fn calibration_attack(&self, epsilon: f64) -> AttackConfig {
        AttackConfig { epsilon, ..self.calibration.attack_config.clone() }
    }

    pub fn eval_attack(&self) -> AttackConfig {
        AttackConfig { epsilon: self.eval.epsilon, ..self.eval.attack_config.clone() }
    }

    /// Field-level checks; every failure names the offending key.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.n_seeds == 0 {
            return bad("n_seeds must be at least 1".into());
        }
        self.ensemble_config().validate().map_err(|e| HarnessError::Config(format!("[train]/[ensemble]: {e}")))?;
        self.training_scenario()?;
        self.evaluation_scenario()?;
        let c = &self.calibration;
        if c.epsilons.is_empty() {
            return bad("calibration.epsilons must not be empty".into());
        }
        if c.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return bad("calibration.epsilons must be finite and non-negative".into());
        }
        if !c.attack.is_gradient() {
            return bad(format!("calibration.attack must be fw, pgd or fgsm, got {}", c.attack.label()));
        }
        if c.probe_size == 0 || c.steps_per_level == 0 {
            return bad("calibration.probe_size and calibration.steps_per_level must be positive".into());
        }
        if !(c.k_mult > 0.0 && c.k_mult <= 1.0) {
            return bad("calibration.k_mult must lie in (0, 1]".into());
        }
        self.calibration_attack(1.0).validate().map_err(|e| HarnessError::Config(format!("[calibration]: {e}")))?;
        let e = &self.eval;
        if e.episodes == 0 {
            return bad("eval.episodes must be positive".into());
        }
        self.eval_attack().validate().map_err(|er| HarnessError::Config(format!("[eval]: {er}")))?;
        if e.deploy.window == 0 || !(e.deploy.k_mult > 0.0 && e.deploy.k_mult <= 1.0) {
            return bad("eval.deploy.window must be positive and eval.deploy.k_mult in (0, 1]".into());
        }
        for s in e.samplers.iter().chain(&self.bandit.samplers) {
            s.build(2).map_err(|er| HarnessError::Config(format!("sampler {}: {er}", s.label())))?;
        }
        if self.bandit.runs == 0 || self.bandit.steps == Some(0) {
            return bad("bandit.runs and bandit.steps must be positive".into());
        }
        self.bandit_schedule()?;
        let b = &self.baselines;
        if !(0.0..=1.0).contains(&b.nr_alpha) || !(0.0..=1.0).contains(&b.pr_alpha) || !(b.adversarial_epsilon >= 0.0) {
            return bad("baselines: alphas must lie in [0, 1] and adversarial_epsilon be non-negative".into());
        }
        Ok(())
    }

    /// Canonical TOML of the resolved settings.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
