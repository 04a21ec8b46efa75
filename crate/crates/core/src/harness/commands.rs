use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::io::{read_json, write_json, OutputDir};
use super::HarnessError;
use crate::bandit::{
    deploy_switching, evaluate_policy, mean_cumulative, run_many, EvalMetrics, RewardSchedule, SamplerKind, ThreatModel,
};
use crate::environment::Environment;
use crate::robust_rl::{
    build_ensemble, train_adversarial_ddpg, train_nr_mdp, train_pr_mdp, EnsembleSet, EntropyGapReport, EpisodeStats, Mode,
    RobustPolicyPair, TrainOutcome,
};
use crate::seeding::derive_seed;
use crate::shift::{calibrate as calibrate_shift, harvest_probe_states, ShiftReport};

pub fn seed_for(master: u64, index: usize) -> u64 {
    derive_seed(master, index as u64)
}

fn seed_dir(index: usize) -> PathBuf {
    PathBuf::from(format!("seed_{index}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub label: String,
    pub mode: Mode,
}

impl ModelEntry {
    fn of(mode: Mode) -> Self {
        Self { label: mode.label(), mode }
    }

    pub fn alpha(&self) -> f64 {
        self.mode.alpha()
    }
}

/// Checkpoints written for one seed: ensemble in switching order, then baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed_index: usize,
    pub seed: u64,
    pub ensemble: Vec<ModelEntry>,
    pub baselines: Vec<ModelEntry>,
}

fn checkpoint_path(root: &Path, seed_index: usize, label: &str) -> PathBuf {
    root.join(seed_dir(seed_index)).join("checkpoints").join(format!("{label}.json"))
}

fn manifest_path(root: &Path, seed_index: usize) -> PathBuf {
    root.join(seed_dir(seed_index)).join("manifest.json")
}

fn calibration_path(root: &Path, seed_index: usize) -> PathBuf {
    root.join(seed_dir(seed_index)).join("calibration.json")
}

/// Trained models of one seed, in manifest order.
#[derive(Debug, Clone)]
pub struct LoadedModels {
    pub manifest: Manifest,
    pub ensemble: Vec<RobustPolicyPair>,
    pub baselines: Vec<RobustPolicyPair>,
}

impl LoadedModels {
    pub fn ensemble_refs(&self) -> Vec<&RobustPolicyPair> {
        self.ensemble.iter().collect()
    }
}

pub fn load_models(root: &Path, seed_index: usize) -> Result<LoadedModels, HarnessError> {
    let manifest: Manifest = read_json(&manifest_path(root, seed_index))?;
    let load = |entries: &[ModelEntry]| -> Result<Vec<RobustPolicyPair>, HarnessError> {
        entries.iter().map(|e| read_json(&checkpoint_path(root, seed_index, &e.label))).collect()
    };
    Ok(LoadedModels { ensemble: load(&manifest.ensemble)?, baselines: load(&manifest.baselines)?, manifest })
}

pub fn load_calibration(root: &Path, seed_index: usize) -> Result<Vec<ShiftReport>, HarnessError> {
    read_json(&calibration_path(root, seed_index))
}

/// Training products of one seed.
#[derive(Debug, Clone)]
pub struct SeedTraining {
    pub seed_index: usize,
    pub seed: u64,
    pub ensemble: EnsembleSet,
    pub baselines: Vec<TrainOutcome>,
}

#[derive(Serialize)]
struct RewardRow<'a> {
    seed_index: usize,
    model: &'a str,
    alpha: f64,
    episode: usize,
    reward: f64,
    conflicts: usize,
    steps: usize,
    reached_goal: bool,
    explored: bool,
}

#[derive(Serialize)]
struct EntropyRow<'a> {
    seed_index: usize,
    model: &'a str,
    alpha: f64,
    h_rand: f64,
    h_opt: f64,
    delta_h: f64,
}

fn reward_rows<'a>(seed_index: usize, label: &'a str, alpha: f64, eps: &'a [EpisodeStats]) -> impl Iterator<Item = RewardRow<'a>> + 'a {
    eps.iter().map(move |e| RewardRow {
        seed_index,
        model: label,
        alpha,
        episode: e.episode,
        reward: e.total_reward,
        conflicts: e.conflicts,
        steps: e.steps,
        reached_goal: e.reached_goal,
        explored: e.explored,
    })
}

fn entropy_row(seed_index: usize, label: &str, alpha: f64, h: EntropyGapReport) -> EntropyRow<'_> {
    EntropyRow { seed_index, model: label, alpha, h_rand: h.h_rand, h_opt: h.h_opt, delta_h: h.delta_h }
}

fn train_seed(cfg: &ExperimentConfig, env: &Environment, seed_index: usize, seed: u64) -> Result<SeedTraining, HarnessError> {
    let ensemble = build_ensemble(env, &cfg.ensemble_config(), seed)?;
    let mut baselines = Vec::new();
    if cfg.baselines.enabled {
        let b = &cfg.baselines;
        baselines.push(train_nr_mdp(&mut env.clone(), b.nr_alpha, &cfg.train, seed)?);
        baselines.push(train_pr_mdp(&mut env.clone(), b.pr_alpha, &cfg.train, seed)?);
        baselines.push(train_adversarial_ddpg(&mut env.clone(), b.adversarial_epsilon, &cfg.train, seed)?);
    }
    Ok(SeedTraining { seed_index, seed, ensemble, baselines })
}

/// Trains the ensemble (and baselines) for every seed, then writes checkpoints,
/// `rewards.csv` and `entropy.csv`.
pub fn train_ensemble(cfg: &ExperimentConfig, master: u64, out: &Path) -> Result<Vec<SeedTraining>, HarnessError> {
    let dir = OutputDir::new(out, "train-ensemble", cfg, master)?;
    let env = Environment::new(cfg.training_scenario()?)?;
    let runs: Vec<SeedTraining> = (0..cfg.n_seeds)
        .into_par_iter()
        .map(|k| train_seed(cfg, &env, k, seed_for(master, k)))
        .collect::<Result<_, _>>()?;

    let mut rewards = Vec::new();
    let mut entropy = Vec::new();
    for run in &runs {
        let mut manifest = Manifest { seed_index: run.seed_index, seed: run.seed, ensemble: Vec::new(), baselines: Vec::new() };
        for m in &run.ensemble.members {
            let entry = ModelEntry::of(m.pair.mode);
            write_json(&checkpoint_path(out, run.seed_index, &entry.label), &m.pair)?;
            manifest.ensemble.push(entry);
        }
        for b in &run.baselines {
            let entry = ModelEntry::of(b.pair.mode);
            write_json(&checkpoint_path(out, run.seed_index, &entry.label), &b.pair)?;
            manifest.baselines.push(entry);
        }
        write_json(&manifest_path(out, run.seed_index), &manifest)?;
    }
    let labels: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            r.ensemble
                .members
                .iter()
                .map(|m| m.pair.mode.label())
                .chain(r.baselines.iter().map(|b| b.pair.mode.label()))
                .collect()
        })
        .collect();
    for (run, names) in runs.iter().zip(&labels) {
        let stats = run
            .ensemble
            .members
            .iter()
            .map(|m| (m.alpha, &m.episodes, m.entropy))
            .chain(run.baselines.iter().map(|b| (b.pair.alpha(), &b.episodes, b.entropy)));
        for ((alpha, eps, h), label) in stats.zip(names) {
            rewards.extend(reward_rows(run.seed_index, label, alpha, eps));
            entropy.push(entropy_row(run.seed_index, label, alpha, h));
        }
    }
    dir.write_csv(
        "rewards.csv",
        &["seed_index", "model", "alpha", "episode", "reward", "conflicts", "steps", "reached_goal", "explored"],
        &rewards,
    )?;
    dir.write_csv("entropy.csv", &["seed_index", "model", "alpha", "h_rand", "h_opt", "delta_h"], &entropy)?;
    Ok(runs)
}

#[derive(Debug, Clone)]
pub struct SeedCalibration {
    pub seed_index: usize,
    pub seed: u64,
    pub labels: Vec<String>,
    pub reports: Vec<ShiftReport>,
}

#[derive(Serialize)]
struct CalibrationRow<'a> {
    seed_index: usize,
    epsilon: f64,
    model: &'a str,
    alpha: f64,
    d: f64,
    p_true: f64,
}

fn calibrate_seed(cfg: &ExperimentConfig, env: &Environment, out: &Path, seed_index: usize) -> Result<SeedCalibration, HarnessError> {
    let models = load_models(out, seed_index)?;
    let seed = models.manifest.seed;
    let refs = models.ensemble_refs();
    let probes = harvest_probe_states(env, refs[0], cfg.calibration.probe_size, seed)?;
    let c = &cfg.calibration;
    let reports = c
        .epsilons
        .par_iter()
        .map(|&eps| {
            calibrate_shift(&refs, probes.view(), c.attack, &cfg.calibration_attack(eps), c.reference, c.k_mult, seed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let labels = models.manifest.ensemble.iter().map(|e| e.label.clone()).collect();
    Ok(SeedCalibration { seed_index, seed, labels, reports })
}

/// Shift and success rate of every ensemble member at every budget, from saved checkpoints.
pub fn calibrate(cfg: &ExperimentConfig, master: u64, out: &Path) -> Result<Vec<SeedCalibration>, HarnessError> {
    let dir = OutputDir::new(out, "calibrate", cfg, master)?;
    let env = Environment::new(cfg.evaluation_scenario()?)?;
    let runs: Vec<SeedCalibration> =
        (0..cfg.n_seeds).into_par_iter().map(|k| calibrate_seed(cfg, &env, out, k)).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for run in &runs {
        write_json(&calibration_path(out, run.seed_index), &run.reports)?;
        let mut schedule = RewardSchedule::from_reports(&run.reports, cfg.calibration.steps_per_level)?;
        schedule.models = run.labels.clone();
        write_json(&out.join(seed_dir(run.seed_index)).join("schedule.json"), &schedule)?;
        for r in &run.reports {
            for (k, label) in run.labels.iter().enumerate() {
                let alpha = if k == 0 { 0.0 } else { label_alpha(label) };
                rows.push(CalibrationRow { seed_index: run.seed_index, epsilon: r.epsilon, model: label, alpha, d: r.d[k], p_true: r.p_true[k] });
            }
        }
    }
    dir.write_csv("calibration.csv", &["seed_index", "epsilon", "model", "alpha", "d", "p_true"], &rows)?;
    Ok(runs)
}

fn label_alpha(label: &str) -> f64 {
    label.rsplit('_').next().and_then(|s| s.parse().ok()).unwrap_or(0.0)
}

/// Report whose budget is closest to `epsilon`.
pub fn nearest_report(reports: &[ShiftReport], epsilon: f64) -> Option<&ShiftReport> {
    reports.iter().min_by(|a, b| (a.epsilon - epsilon).abs().total_cmp(&(b.epsilon - epsilon).abs()))
}

#[derive(Debug, Clone)]
pub struct SeedEvaluation {
    pub seed_index: usize,
    pub seed: u64,
    pub results: Vec<(String, EvalMetrics)>,
}

impl SeedEvaluation {
    pub fn get(&self, label: &str) -> Option<&EvalMetrics> {
        self.results.iter().find(|(l, _)| l == label).map(|(_, m)| m)
    }
}

enum Cell<'a> {
    Fixed(String, &'a RobustPolicyPair),
    Switched(SamplerKind),
}

pub fn switched_label(kind: &SamplerKind) -> String {
    format!("switch_{}", kind.label())
}

fn evaluate_seed(cfg: &ExperimentConfig, env: &Environment, out: &Path, seed_index: usize) -> Result<SeedEvaluation, HarnessError> {
    let models = load_models(out, seed_index)?;
    let reports = load_calibration(out, seed_index)?;
    let seed = models.manifest.seed;
    let calibration = nearest_report(&reports, cfg.eval.epsilon)
        .ok_or_else(|| HarnessError::MissingArtifact(calibration_path(out, seed_index)))?;
    let threat = ThreatModel::new(cfg.eval.attack, cfg.eval_attack());
    let refs = models.ensemble_refs();

    let mut cells: Vec<Cell> = models.manifest.ensemble.iter().zip(&models.ensemble).map(|(e, p)| Cell::Fixed(e.label.clone(), p)).collect();
    if cfg.eval.baselines {
        cells.extend(models.manifest.baselines.iter().zip(&models.baselines).map(|(e, p)| Cell::Fixed(e.label.clone(), p)));
    }
    cells.extend(cfg.eval.samplers.iter().map(|s| Cell::Switched(*s)));

    let n = cfg.eval.episodes;
    let results = cells
        .par_iter()
        .map(|cell| match cell {
            Cell::Fixed(label, pair) => Ok((label.clone(), evaluate_policy(env, pair, &threat, n, seed)?)),
            Cell::Switched(kind) => Ok((
                switched_label(kind),
                deploy_switching(&refs, calibration, env, &threat, *kind, &cfg.eval.deploy, n, seed)?,
            )),
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(SeedEvaluation { seed_index, seed, results })
}

#[derive(Serialize)]
struct EvalEpisodeRow<'a> {
    seed_index: usize,
    policy: &'a str,
    episode: usize,
    reward: f64,
    conflicts: usize,
    steps: usize,
    path_length: f64,
    reached_goal: bool,
}

#[derive(Serialize)]
struct EvalSummaryRow<'a> {
    seed_index: usize,
    policy: &'a str,
    episodes: usize,
    mean_reward: f64,
    total_conflicts: usize,
    conflict_free: usize,
    mean_path_length: f64,
    goal_rate: f64,
}

/// Rolls out every fixed policy and every switching sampler under the configured attack.
pub fn evaluate(cfg: &ExperimentConfig, master: u64, out: &Path) -> Result<Vec<SeedEvaluation>, HarnessError> {
    let dir = OutputDir::new(out, "evaluate", cfg, master)?;
    let env = Environment::new(cfg.evaluation_scenario()?)?;
    let runs: Vec<SeedEvaluation> =
        (0..cfg.n_seeds).into_par_iter().map(|k| evaluate_seed(cfg, &env, out, k)).collect::<Result<_, _>>()?;
    let mut episodes = Vec::new();
    let mut summary = Vec::new();
    for run in &runs {
        for (label, m) in &run.results {
            episodes.extend(m.episodes.iter().map(|e| EvalEpisodeRow {
                seed_index: run.seed_index,
                policy: label,
                episode: e.episode,
                reward: e.reward,
                conflicts: e.conflicts,
                steps: e.steps,
                path_length: e.path_length,
                reached_goal: e.reached_goal,
            }));
            summary.push(EvalSummaryRow {
                seed_index: run.seed_index,
                policy: label,
                episodes: m.episodes.len(),
                mean_reward: m.mean_reward(),
                total_conflicts: m.total_conflicts(),
                conflict_free: m.conflict_free(),
                mean_path_length: m.mean_path_length(),
                goal_rate: m.goal_rate(),
            });
        }
    }
    dir.write_csv(
        "eval_episodes.csv",
        &["seed_index", "policy", "episode", "reward", "conflicts", "steps", "path_length", "reached_goal"],
        &episodes,
    )?;
    dir.write_csv(
        "eval_summary.csv",
        &["seed_index", "policy", "episodes", "mean_reward", "total_conflicts", "conflict_free", "mean_path_length", "goal_rate"],
        &summary,
    )?;
    Ok(runs)
}

#[derive(Debug, Clone)]
pub struct BanditSimResult {
    pub sampler: SamplerKind,
    pub mean_cumulative: Vec<f64>,
    pub totals: Vec<f64>,
    pub selections: Vec<usize>,
}

/// Pure bandit runs on a reward schedule; no policies involved.
pub fn bandit_sim(cfg: &ExperimentConfig, master: u64, out: &Path) -> Result<Vec<BanditSimResult>, HarnessError> {
    let dir = OutputDir::new(out, "bandit-sim", cfg, master)?;
    let schedule = cfg.bandit_schedule()?;
    let steps = cfg.bandit.steps.unwrap_or_else(|| schedule.total_steps());
    let n_arms = schedule.n_arms();
    let mut results = Vec::new();
    for kind in &cfg.bandit.samplers {
        let traces = run_many(*kind, &schedule, steps, master, cfg.bandit.runs)?;
        let mut selections = vec![0; n_arms];
        for t in &traces {
            for (s, c) in selections.iter_mut().zip(t.histogram(n_arms)) {
                *s += c;
            }
        }
        results.push(BanditSimResult {
            sampler: *kind,
            mean_cumulative: mean_cumulative(&traces),
            totals: traces.iter().map(|t| t.total()).collect(),
            selections,
        });
    }
    let mut curve = Vec::new();
    let mut totals = Vec::new();
    let mut hist = Vec::new();
    for r in &results {
        let label = r.sampler.label();
        curve.extend(r.mean_cumulative.iter().enumerate().map(|(t, &c)| (label, t + 1, c)));
        totals.extend(r.totals.iter().enumerate().map(|(i, &c)| (label, i, seed_for(master, i), c)));
        hist.extend(r.selections.iter().enumerate().map(|(k, &c)| (label, k, c)));
    }
    dir.write_csv("regret.csv", &["sampler", "step", "mean_cumulative_regret"], &curve)?;
    dir.write_csv("regret_runs.csv", &["sampler", "run", "seed", "total_regret"], &totals)?;
    dir.write_csv("selections.csv", &["sampler", "arm", "count"], &hist)?;
    Ok(results)
}
