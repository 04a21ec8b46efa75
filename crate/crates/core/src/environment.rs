//! UAV deconfliction MDP built on the IFDS flow field.
//!
//! An action is the triple `(rho0, sigma0, theta)` of flow-field response
//! parameters. The UAV moves one Euler step along the disturbed flow, the
//! obstacles advance along their motion laws and the step is scored by the
//! collision penalty, goal progress and threat-zone terms.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowfield::{self, FlowError, IfdsParams, ObstacleKinematics, ObstacleShape, Vec3};
use crate::seeding::{self, Rng, Stream};

pub const OBS_DIM: usize = 9;
pub const ACT_DIM: usize = 3;

const RESET_RETRIES: usize = 100;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("could not place the UAV outside every obstacle after {0} draws")]
    StartInsideObstacle(usize),
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("goal coincides with the obstacle center used for progress scaling")]
    DegenerateProgressScale,
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("episode log: {0}")]
    Csv(#[from] csv::Error),
}

/// The 9-component observation: goal, nearest obstacle and its velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentObs {
    pub rel_goal: Vec3,
    pub rel_obs: Vec3,
    pub obs_vel: Vec3,
}

impl AgentObs {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        out[..3].copy_from_slice(self.rel_goal.as_slice());
        out[3..6].copy_from_slice(self.rel_obs.as_slice());
        out[6..].copy_from_slice(self.obs_vel.as_slice());
        out
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), OBS_DIM, "observation must have {OBS_DIM} components");
        Self {
            rel_goal: Vec3::new(v[0], v[1], v[2]),
            rel_obs: Vec3::new(v[3], v[4], v[5]),
            obs_vel: Vec3::new(v[6], v[7], v[8]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub c1: f64,
    pub c2: f64,
    pub eps_goal: f64,
    pub threat_margin: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lambda1: -1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            c1: 10.0,
            c2: 1.0,
            eps_goal: 0.2,
            threat_margin: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), EnvError> {
        let ok = [self.lambda1, self.lambda2, self.lambda3].iter().all(|v| v.is_finite())
            && self.c1 > 0.0
            && self.c2 > 0.0
            && self.eps_goal > 0.0
            && self.threat_margin > 0.0;
        if ok {
            Ok(())
        } else {
            Err(EnvError::InvalidScenario("reward weights out of range".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub start_mean: Vec3,
    pub start_var: f64,
    pub max_ascent: f64,
    pub max_descent: f64,
    pub protect_radius: f64,
    pub conflict_buffer: f64,
    pub max_steps: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            start_mean: Vec3::new(0.0, 2.0, 5.0),
            start_var: 0.25,
            max_ascent: 5.0 * PI / 9.0,
            max_descent: -15.0 * PI / 36.0,
            protect_radius: 1.5,
            conflict_buffer: 0.4,
            max_steps: 500,
        }
    }
}

/// Constants of the flow field that are not part of the action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IfdsConstants {
    pub upsilon: f64,
    pub convergence_speed: f64,
    pub dt: f64,
}

impl Default for IfdsConstants {
    fn default() -> Self {
        Self { upsilon: 1.0, convergence_speed: 1.0, dt: 0.2 }
    }
}

/// Box for the physical action `(rho0, sigma0, theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub low: [f64; ACT_DIM],
    pub high: [f64; ACT_DIM],
}

impl Default for ActionBounds {
    fn default() -> Self {
        Self {
            low: [0.1, 0.1, 0.0],
            high: [1.0, 1.0, 2.0 * PI],
        }
    }
}

impl ActionBounds {
    /// Maps a policy output in `[-1, 1]^3` to the physical box, clipping first.
    pub fn to_physical(&self, normalized: &[f64]) -> [f64; ACT_DIM] {
        std::array::from_fn(|i| {
            let a = normalized[i].clamp(-1.0, 1.0);
            self.low[i] + 0.5 * (a + 1.0) * (self.high[i] - self.low[i])
        })
    }

    pub fn to_normalized(&self, physical: &[f64]) -> [f64; ACT_DIM] {
        std::array::from_fn(|i| 2.0 * (physical[i] - self.low[i]) / (self.high[i] - self.low[i]) - 1.0)
    }
}

/// How an obstacle center evolves with the step index `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionLaw {
    Static,
    /// `x += L cos t`, `y += L sin t` with `t` in radians.
    Circular { step_length: f64 },
    /// `base + amplitude * sin(frequency * t + phase)`, componentwise.
    Sinusoidal { amplitude: Vec3, frequency: f64, phase: Vec3 },
}

impl MotionLaw {
    /// Center at step `t` given the center at step `t - 1` and the base center.
    pub fn advance(&self, t: usize, previous: &Vec3, base: &Vec3) -> Vec3 {
        match *self {
            MotionLaw::Static => *previous,
            MotionLaw::Circular { step_length } => {
                let tf = t as f64;
                previous + Vec3::new(step_length * tf.cos(), step_length * tf.sin(), 0.0)
            }
            MotionLaw::Sinusoidal { amplitude, frequency, phase } => {
                let tf = t as f64;
                base + Vec3::from_fn(|i, _| amplitude[i] * (frequency * tf + phase[i]).sin())
            }
        }
    }
}

/// The training obstacle law, one step from `t - 1` to `t`.
pub fn obstacle_step(t: usize, previous: &Vec3) -> Vec3 {
    MotionLaw::Circular { step_length: 2.0 }.advance(t, previous, previous)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub shape: ObstacleShape,
    pub motion: MotionLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub goal: Vec3,
    #[serde(default)]
    pub ifds: IfdsConstants,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub rewards: RewardWeights,
    #[serde(default)]
    pub action_bounds: ActionBounds,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self, EnvError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Single obstacle on the circular law.
    pub fn training() -> Self {
        Self::from_json_str(include_str!("../scenarios/training.json")).expect("bundled scenario")
    }

    /// Four obstacles on sinusoidal paths.
    pub fn testing() -> Self {
        Self::from_json_str(include_str!("../scenarios/testing.json")).expect("bundled scenario")
    }

    /// No obstacles.
    pub fn open() -> Self {
        Self::from_json_str(include_str!("../scenarios/open.json")).expect("bundled scenario")
    }

    pub fn n_obstacles(&self) -> usize {
        self.obstacles.len()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidScenario(m.to_string()));
        if !self.goal.iter().all(|v| v.is_finite()) {
            return bad("goal must be finite");
        }
        let e = &self.episode;
        if e.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if !(0.0..=1.0).contains(&e.start_var) {
            return bad("start_var must lie in [0, 1]");
        }
        if !(e.protect_radius > 0.0) || !(e.conflict_buffer >= 0.0) {
            return bad("protect_radius must be positive and conflict_buffer non-negative");
        }
        if !(e.max_descent < 0.0 && e.max_ascent > 0.0) {
            return bad("climb limits must straddle zero");
        }
        let c = &self.ifds;
        if !(c.upsilon > 0.0 && c.convergence_speed > 0.0 && c.dt > 0.0) {
            return bad("ifds constants must be positive");
        }
        self.rewards.validate()?;
        for i in 0..ACT_DIM {
            if !(self.action_bounds.high[i] > self.action_bounds.low[i]) {
                return bad("action bounds must be non-empty");
            }
        }
        if !(self.action_bounds.low[0] > 0.0 && self.action_bounds.low[1] > 0.0) {
            return bad("response coefficient bounds must be positive");
        }
        for o in &self.obstacles {
            o.shape.validate()?;
        }
        Ok(())
    }
}

/// Reward terms of one step. `None` marks an inactive guard.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub r1: Option<f64>,
    pub r2: f64,
    pub r3: Option<f64>,
}

/// Collision penalty: normalized distance when inside the obstacle radius.
pub fn reward_r1(p_next: &Vec3, center: &Vec3, r_obs: f64) -> Option<f64> {
    let d = (p_next - center).norm();
    (d <= r_obs).then(|| d / r_obs)
}

/// Goal progress scaled by the obstacle-to-goal distance, plus the arrival bonus.
pub fn reward_r2(p_next: &Vec3, p_obs: &Vec3, goal: &Vec3, w: &RewardWeights) -> Result<f64, EnvError> {
    let scale = (p_obs - goal).norm();
    if scale == 0.0 {
        return Err(EnvError::DegenerateProgressScale);
    }
    let d = (p_next - goal).norm();
    let bonus = if d <= w.eps_goal { w.c1 } else { 0.0 };
    Ok(-d / scale + bonus)
}

/// Threat-zone term, active strictly between the radius and radius plus margin.
/// The numerator is the unsigned gap to the outer edge of the zone.
pub fn reward_r3(p_next: &Vec3, center: &Vec3, r_obs: f64, w: &RewardWeights) -> Option<f64> {
    let d = (p_next - center).norm();
    let outer = r_obs + w.threat_margin;
    (d > r_obs && d < outer).then(|| (d - outer).abs() / r_obs - w.c2)
}

pub fn total_reward(c: &RewardComponents, w: &RewardWeights) -> f64 {
    w.lambda1 * c.r1.unwrap_or(0.0) + w.lambda2 * c.r2 + w.lambda3 * c.r3.unwrap_or(0.0)
}

/// Rescales the vertical part of `delta` so the flight-path angle stays in the limits.
pub fn clamp_climb(delta: Vec3, max_descent: f64, max_ascent: f64) -> Vec3 {
    let horiz = delta.x.hypot(delta.y);
    let angle = delta.z.atan2(horiz);
    let mut out = delta;
    if angle < max_descent && max_descent > -FRAC_PI_2 {
        out.z = horiz * max_descent.tan();
    } else if angle > max_ascent && max_ascent < FRAC_PI_2 {
        out.z = horiz * max_ascent.tan();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_obs: AgentObs,
    pub reward: f64,
    pub done: bool,
    pub conflict: bool,
    pub reached_goal: bool,
    pub components: RewardComponents,
    pub position: Vec3,
}

/// One row of an episode log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r1: Option<f64>,
    pub r2: f64,
    pub r3: Option<f64>,
    pub reward: f64,
    pub conflict: bool,
}

impl StepRecord {
    pub fn new(step: usize, o: &StepOutcome) -> Self {
        Self {
            step,
            x: o.position.x,
            y: o.position.y,
            z: o.position.z,
            r1: o.components.r1,
            r2: o.components.r2,
            r3: o.components.r3,
            reward: o.reward,
            conflict: o.conflict,
        }
    }
}

pub fn write_episode_log<W: Write>(out: W, rows: &[StepRecord]) -> Result<(), EnvError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Environment {
    scenario: Scenario,
    position: Vec3,
    centers: Vec<Vec3>,
    velocities: Vec<Vec3>,
    step_index: usize,
    done: bool,
    start_goal_distance: f64,
    rng: Rng,
}

impl Environment {
    pub fn new(scenario: Scenario) -> Result<Self, EnvError> {
        scenario.validate()?;
        let centers = scenario.obstacles.iter().map(|o| o.shape.center).collect();
        let n = scenario.obstacles.len();
        let position = scenario.episode.start_mean;
        let start_goal_distance = (position - scenario.goal).norm();
        let mut env = Self {
            scenario,
            position,
            centers,
            velocities: vec![Vec3::zeros(); n],
            step_index: 0,
            done: true,
            start_goal_distance,
            rng: seeding::stream(0, Stream::Environment),
        };
        env.refresh_velocities();
        Ok(env)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn position(&self) -> Vec3 {
        self.position
    }

    pub fn obstacle_centers(&self) -> &[Vec3] {
        &self.centers
    }

    pub fn steps_taken(&self) -> usize {
        self.step_index
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn action_bounds(&self) -> &ActionBounds {
        &self.scenario.action_bounds
    }

    /// Starts an episode. The start position is drawn from the `Environment` stream of `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<AgentObs, EnvError> {
        self.rng = seeding::stream(seed, Stream::Environment);
        self.step_index = 0;
        self.centers = self.scenario.obstacles.iter().map(|o| o.shape.center).collect();
        self.refresh_velocities();
        let ep = self.scenario.episode;
        let std = ep.start_var.sqrt();
        let mut placed = None;
        for _ in 0..RESET_RETRIES {
            let p = if std == 0.0 {
                ep.start_mean
            } else {
                let n = Normal::new(0.0, std).expect("finite std");
                ep.start_mean + Vec3::from_fn(|_, _| n.sample(&mut self.rng))
            };
            if !self.inside_any(&p) {
                placed = Some(p);
                break;
            }
        }
        self.position = placed.ok_or(EnvError::StartInsideObstacle(RESET_RETRIES))?;
        self.start_goal_distance = (self.position - self.scenario.goal).norm();
        self.done = false;
        Ok(self.observe())
    }

    fn inside_any(&self, p: &Vec3) -> bool {
        self.scenario
            .obstacles
            .iter()
            .zip(&self.centers)
            .any(|(o, c)| flowfield::gamma(p, &o.shape.with_center(*c)) <= 1.0)
    }

    fn refresh_velocities(&mut self) {
        let dt = self.scenario.ifds.dt;
        let t = self.step_index + 1;
        self.velocities = self
            .scenario
            .obstacles
            .iter()
            .zip(&self.centers)
            .map(|(o, c)| (o.motion.advance(t, c, &o.shape.center) - c) / dt)
            .collect();
    }

    fn nearest_obstacle(&self, p: &Vec3) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.centers.iter().enumerate() {
            let d = (c - p).norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Observation as seen from `p`, which may differ from the true position under spoofing.
    pub fn observe_at(&self, p: &Vec3) -> AgentObs {
        let rel_goal = self.scenario.goal - p;
        match self.nearest_obstacle(p) {
            Some(i) => AgentObs {
                rel_goal,
                rel_obs: self.centers[i] - p,
                obs_vel: self.velocities[i],
            },
            None => AgentObs { rel_goal, rel_obs: Vec3::zeros(), obs_vel: Vec3::zeros() },
        }
    }

    pub fn observe(&self) -> AgentObs {
        self.observe_at(&self.position)
    }

    /// Current obstacles inflated by the protection radius, as the planner sees them.
    pub fn planning_obstacles(&self) -> Vec<ObstacleKinematics> {
        let margin = self.scenario.episode.protect_radius;
        self.scenario
            .obstacles
            .iter()
            .zip(self.centers.iter().zip(&self.velocities))
            .map(|(o, (c, v))| ObstacleKinematics {
                shape: o.shape.with_center(*c).inflated(margin),
                velocity: *v,
            })
            .collect()
    }

    pub fn ifds_params(&self, action: &[f64; ACT_DIM]) -> IfdsParams {
        let c = &self.scenario.ifds;
        IfdsParams {
            rho0: action[0],
            sigma0: action[1],
            theta: action[2],
            upsilon: c.upsilon,
            convergence_speed: c.convergence_speed,
            dt: c.dt,
        }
    }

    /// Applies a policy output in `[-1, 1]^3`.
    pub fn step_normalized(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        let physical = self.scenario.action_bounds.to_physical(action);
        self.step(&physical)
    }

    /// Applies a physical action `(rho0, sigma0, theta)`.
    pub fn step(&mut self, action: &[f64; ACT_DIM]) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let params = self.ifds_params(action);
        params.validate()?;
        let goal = self.scenario.goal;
        let flow = flowfield::disturbed_flow(&self.position, &goal, &self.planning_obstacles(), &params)?;
        let ep = self.scenario.episode;
        let delta = clamp_climb(flow * params.dt, ep.max_descent, ep.max_ascent);
        let p_next = self.position + delta;

        self.step_index += 1;
        let t = self.step_index;
        for (o, c) in self.scenario.obstacles.iter().zip(self.centers.iter_mut()) {
            *c = o.motion.advance(t, c, &o.shape.center);
        }
        self.refresh_velocities();
        self.position = p_next;

        let w = self.scenario.rewards;
        let mut comps = RewardComponents::default();
        let mut conflict = false;
        for (o, c) in self.scenario.obstacles.iter().zip(&self.centers) {
            let r_obs = o.shape.bounding_radius();
            if let Some(r1) = reward_r1(&p_next, c, r_obs) {
                *comps.r1.get_or_insert(0.0) += r1;
            }
            if let Some(r3) = reward_r3(&p_next, c, r_obs, &w) {
                *comps.r3.get_or_insert(0.0) += r3;
            }
            conflict |= (p_next - c).norm() < r_obs + ep.conflict_buffer;
        }
        comps.r2 = match self.nearest_obstacle(&p_next) {
            Some(i) => reward_r2(&p_next, &self.centers[i], &goal, &w)?,
            None => {
                let d = (p_next - goal).norm();
                let bonus = if d <= w.eps_goal { w.c1 } else { 0.0 };
                -d / self.start_goal_distance.max(f64::MIN_POSITIVE) + bonus
            }
        };
        let reward = total_reward(&comps, &w);
        let reached_goal = (p_next - goal).norm() <= w.eps_goal;
        self.done = reached_goal || self.step_index >= ep.max_steps;
        Ok(StepOutcome {
            next_obs: self.observe(),
            reward,
            done: self.done,
            conflict,
            reached_goal,
            components: comps,
            position: p_next,
        })
    }

    /// Uniform random physical action, drawn from `rng`.
    pub fn sample_action(&self, rng: &mut Rng) -> [f64; ACT_DIM] {
        let b = &self.scenario.action_bounds;
        std::array::from_fn(|i| rng.random_range(b.low[i]..b.high[i]))
    }
}
