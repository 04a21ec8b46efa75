use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampler::{argmax, bernoulli, SamplerKind};
use super::BanditError;
use crate::seeding::{derive_seed, stream, Stream};
use crate::shift::ShiftReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: usize,
    pub p_true: Vec<f64>,
    /// Attack budget the rates were calibrated at, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

/// Piecewise-stationary Bernoulli success rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSchedule {
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_mult: Option<f64>,
}

impl RewardSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self, BanditError> {
        let s = Self { segments, models: Vec::new(), k_mult: None };
        s.validate()?;
        Ok(s)
    }

    pub fn stationary(p_true: Vec<f64>, duration: usize) -> Result<Self, BanditError> {
        Self::new(vec![Segment { duration, p_true, epsilon: None }])
    }

    /// Five 800-step levels at budgets 0.5 to 2.5 over vanilla plus four robust models.
    pub fn canonical() -> Self {
        Self::from_json_str(include_str!("../../fixtures/canonical_schedule.json")).expect("bundled schedule")
    }

    pub fn from_json_str(text: &str) -> Result<Self, BanditError> {
        let s: Self = serde_json::from_str(text).map_err(|e| BanditError::Schedule(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, BanditError> {
        let s: Self = toml::from_str(text).map_err(|e| BanditError::Schedule(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Reads JSON or TOML by extension.
    pub fn load(path: &Path) -> Result<Self, BanditError> {
        let text = std::fs::read_to_string(path).map_err(|e| BanditError::Schedule(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            _ => Self::from_json_str(&text),
        }
    }

    /// One segment per calibration report, each `duration` steps long.
    pub fn from_reports(reports: &[ShiftReport], duration: usize) -> Result<Self, BanditError> {
        let segments = reports
            .iter()
            .map(|r| Segment { duration, p_true: r.p_true.clone(), epsilon: Some(r.epsilon) })
            .collect();
        let mut s = Self::new(segments)?;
        s.k_mult = reports.first().map(|r| r.k_mult);
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), BanditError> {
        let bad = |m: String| Err(BanditError::Schedule(m));
        let Some(first) = self.segments.first() else {
            return bad("schedule has no segments".into());
        };
        let k = first.p_true.len();
        if k == 0 {
            return bad("segments need at least one arm".into());
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.duration == 0 {
                return bad(format!("segment {i} has zero duration"));
            }
            if s.p_true.len() != k {
                return bad(format!("segment {i} has {} arms, expected {k}", s.p_true.len()));
            }
            if s.p_true.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("segment {i} has a rate outside [0, 1]"));
            }
        }
        if !self.models.is_empty() && self.models.len() != k {
            return bad(format!("{} model names for {k} arms", self.models.len()));
        }
        Ok(())
    }

    pub fn n_arms(&self) -> usize {
        self.segments[0].p_true.len()
    }

    pub fn total_steps(&self) -> usize {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Rates active at step `t`; the last segment persists past the end.
    pub fn p_at(&self, t: usize) -> &[f64] {
        let mut end = 0;
        for s in &self.segments {
            end += s.duration;
            if t < end {
                return &s.p_true;
            }
        }
        &self.segments.last().expect("validated").p_true
    }

    /// Start step of every segment after the first.
    pub fn changepoints(&self) -> Vec<usize> {
        self.segments
            .iter()
            .scan(0, |acc, s| {
                *acc += s.duration;
                Some(*acc)
            })
            .take(self.segments.len() - 1)
            .collect()
    }
}

/// Per-step arm choices and regret against the active segment's best rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub arms: Vec<usize>,
    pub rewards: Vec<bool>,
    pub instant: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl RegretTrace {
    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    /// `R(t)`: regret summed over the first `t` steps.
    pub fn regret_at(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.cumulative[t - 1]
        }
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Fraction of steps in `[from, to)` that played `arm`.
    pub fn frequency(&self, arm: usize, from: usize, to: usize) -> f64 {
        let n = self.arms[from..to].iter().filter(|&&a| a == arm).count();
        n as f64 / (to - from) as f64
    }

    /// Selection counts per arm.
    pub fn histogram(&self, n_arms: usize) -> Vec<usize> {
        let mut h = vec![0; n_arms];
        for &a in &self.arms {
            h[a] += 1;
        }
        h
    }
}

/// Simulates `steps` rounds: select, draw the Bernoulli reward on the chosen
/// arm's active rate, feed it to the sampler, and log expected regret.
pub fn run_switching(kind: SamplerKind, schedule: &RewardSchedule, steps: usize, seed: u64) -> Result<RegretTrace, BanditError> {
    schedule.validate()?;
    let mut sampler = kind.build(schedule.n_arms())?;
    let mut rng_sampler = stream(seed, Stream::Sampler);
    let mut rng_reward = stream(seed, Stream::Environment);
    let mut trace = RegretTrace {
        arms: Vec::with_capacity(steps),
        rewards: Vec::with_capacity(steps),
        instant: Vec::with_capacity(steps),
        cumulative: Vec::with_capacity(steps),
    };
    let mut total = 0.0;
    for t in 0..steps {
        let p = schedule.p_at(t);
        let k = sampler.select(&mut rng_sampler);
        let r_tilde = if bernoulli(p[k], &mut rng_reward)? { 1.0 } else { 0.0 };
        let r = sampler.update(k, r_tilde, &mut rng_sampler)?;
        let regret = p[argmax(p)] - p[k];
        total += regret;
        trace.arms.push(k);
        trace.rewards.push(r);
        trace.instant.push(regret);
        trace.cumulative.push(total);
    }
    Ok(trace)
}

/// Independent runs with seeds `derive_seed(master, i)`, in parallel.
pub fn run_many(kind: SamplerKind, schedule: &RewardSchedule, steps: usize, master: u64, runs: usize) -> Result<Vec<RegretTrace>, BanditError> {
    (0..runs)
        .into_par_iter()
        .map(|i| run_switching(kind, schedule, steps, derive_seed(master, i as u64)))
        .collect()
}

/// Seed-averaged cumulative regret curve.
pub fn mean_cumulative(traces: &[RegretTrace]) -> Vec<f64> {
    let Some(first) = traces.first() else {
        return Vec::new();
    };
    let mut acc = vec![0.0; first.len()];
    for t in traces {
        for (a, c) in acc.iter_mut().zip(&t.cumulative) {
            *a += c;
        }
    }
    acc.iter().map(|a| a / traces.len() as f64).collect()
}
