//! Experiment recipes behind the command line: configuration, seed fan-out,
//! checkpoints and CSV outputs with provenance sidecars.

mod commands;
mod config;
mod io;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::attacks::AttackError;
use crate::bandit::BanditError;
use crate::environment::EnvError;
use crate::neural::NnError;
use crate::robust_rl::TrainError;
use crate::shift::ShiftError;

pub use commands::{
    bandit_sim, calibrate, evaluate, load_calibration, load_models, nearest_report, seed_for, switched_label, train_ensemble,
    BanditSimResult, LoadedModels, Manifest, ModelEntry, SeedCalibration, SeedEvaluation, SeedTraining,
};
pub use config::{
    resolve_scenario, BanditSimConfig, BaselineConfig, CalibrationConfig, EvalConfig, ExperimentConfig, GridConfig, Profile,
};
pub use io::{config_hash, meta_path, read_json, write_json, OutputDir, RunMeta, BUILD_ID};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact {0}; run the earlier pipeline stage first")]
    MissingArtifact(PathBuf),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("{0}: {1}")]
    Csv(PathBuf, csv::Error),
    #[error("{0}: {1}")]
    Json(PathBuf, serde_json::Error),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Shift(#[from] ShiftError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl HarnessError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Io(path.to_path_buf(), e)
    }

    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            HarnessError::Train(TrainError::Divergence { .. })
                | HarnessError::Shift(ShiftError::NonFinite)
                | HarnessError::Bandit(BanditError::Shift(ShiftError::NonFinite))
        )
    }

    /// 2 for configuration and missing inputs, 3 for numerical divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            _ if self.is_divergence() => 3,
            HarnessError::Config(_) | HarnessError::MissingArtifact(_) => 2,
            HarnessError::Train(TrainError::InvalidConfig(_)) | HarnessError::Bandit(BanditError::Schedule(_)) => 2,
            _ => 1,
        }
    }
}
