//! Vineyard row-following MDP: observations, shaped reward, termination and the
//! periodic random start-pose strategy.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::distr::Open01;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point2, Pose2};
use crate::rng::Rng;
use crate::robot::{check_collision, step_kinematics, PlatformSpec, RobotState, TerrainConfig, TerrainDisturbance};
use crate::sensor::{apply_noise, render_depth, CameraParams, CameraPose, DepthImage, NoiseSpec};
use crate::world::{CorridorFrame, Direction, VineyardWorld};

pub const V_MAX: f64 = 0.5;
pub const OMEGA_MAX: f64 = 1.0;

/// Velocity command: v in (0, 0.5) m/s, ω in (−1, 1) rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub v: f64,
    pub omega: f64,
}

impl Action {
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    /// Uniform draw over the open action box.
    pub fn sample_uniform<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        let a: f64 = rng.sample(Open01);
        let b: f64 = rng.sample(Open01);
        Self {
            v: V_MAX * a,
            omega: OMEGA_MAX * (2.0 * b - 1.0),
        }
    }

    /// Strictly inside the open action box.
    pub fn in_open_bounds(&self) -> bool {
        self.v > 0.0 && self.v < V_MAX && self.omega > -OMEGA_MAX && self.omega < OMEGA_MAX
    }

    /// Closed-box check used to accept commands; the boundary is reachable in f32.
    pub fn validate(&self) -> Result<()> {
        if !(self.v >= 0.0 && self.v <= V_MAX && self.omega >= -OMEGA_MAX && self.omega <= OMEGA_MAX) {
            return Err(Error::InvalidAction(format!("v = {}, omega = {}", self.v, self.omega)));
        }
        Ok(())
    }
}

/// What a policy network sees: an optional image and a feature vector.
pub trait AgentObservation: Clone + Send + Sync {
    /// Row-major image pixels; empty for vision-free tasks.
    fn image(&self) -> &[f32];
    fn vector(&self) -> &[f32];
}

/// Noisy depth frame plus [v_prev, ω_prev, ψ]. Carries no position data.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub depth: DepthImage,
    pub state: [f32; 3],
}

impl AgentObservation for Observation {
    fn image(&self) -> &[f32] {
        self.depth.data()
    }

    fn vector(&self) -> &[f32] {
        &self.state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub heading_weight: f64,
    pub distance_weight: f64,
    pub success: f64,
    pub collision: f64,
    pub reverse: f64,
    pub yaw_limit_deg: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            heading_weight: 0.6,
            distance_weight: 35.0,
            success: 1000.0,
            collision: -500.0,
            reverse: -500.0,
            yaw_limit_deg: 85.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.heading_weight,
            self.distance_weight,
            self.success,
            self.collision,
            self.reverse,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("reward coefficients must be finite".into()));
        }
        if !(self.yaw_limit_deg > 0.0 && self.yaw_limit_deg < 90.0) {
            return Err(Error::Config("yaw_limit_deg must lie in (0, 90)".into()));
        }
        Ok(())
    }

    pub fn yaw_limit(&self) -> f64 {
        self.yaw_limit_deg.to_radians()
    }
}

/// Start-pose distribution around the corridor median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StartDistribution {
    /// Candidate corridors; empty means all.
    pub corridors: Vec<usize>,
    /// Fraction of the corridor length, measured from the entry in travel direction.
    pub arclength_fraction: [f64; 2],
    pub lateral: f64,
    pub yaw_deg: f64,
    pub forward_probability: f64,
}

impl Default for StartDistribution {
    fn default() -> Self {
        Self {
            corridors: Vec::new(),
            arclength_fraction: [0.0, 0.8],
            lateral: 0.3,
            yaw_deg: 30.0,
            forward_probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub reposition_period: usize,
    pub dt: f64,
    pub start: StartDistribution,
    pub start_retries: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 700,
            reposition_period: 10,
            dt: 0.1,
            start: StartDistribution::default(),
            start_retries: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub reward: RewardConfig,
    pub episode: EpisodeConfig,
    pub camera: CameraParams,
    pub noise: NoiseSpec,
    pub terrain: TerrainConfig,
    pub platform: PlatformSpec,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.camera.validate()?;
        self.platform.validate()?;
        let e = &self.episode;
        if e.max_steps == 0 || e.reposition_period == 0 {
            return Err(Error::Config("max_steps and reposition_period must be >= 1".into()));
        }
        if !(e.dt > 0.0) {
            return Err(Error::Config("dt must be > 0".into()));
        }
        let [lo, hi] = e.start.arclength_fraction;
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return Err(Error::Config("start arclength_fraction must satisfy 0 <= lo <= hi <= 1".into()));
        }
        if !(0.0..=1.0).contains(&e.start.forward_probability) {
            return Err(Error::Config("forward_probability must lie in [0, 1]".into()));
        }
        if !(self.noise.factor >= 0.0) {
            return Err(Error::Config("noise factor must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Running,
    Success,
    Collision,
    Reverse,
    Timeout,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }

    /// Terminal in the MDP sense; a timeout is a truncation and keeps bootstrapping.
    pub fn is_done(self) -> bool {
        matches!(self, Outcome::Success | Outcome::Collision | Outcome::Reverse)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Success => "success",
            Outcome::Collision => "collision",
            Outcome::Reverse => "reverse",
            Outcome::Timeout => "timeout",
        }
    }
}

/// Logging-only data; never part of the observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub step: usize,
    pub pose: Pose2,
    /// Distance to the end of row.
    pub distance: f64,
    /// Heading error towards the end of row.
    pub heading_error: f64,
    pub reward_heading: f64,
    pub reward_distance: f64,
}

#[derive(Debug, Clone)]
pub struct StepResult<O> {
    pub observation: O,
    pub reward: f64,
    pub outcome: Outcome,
    pub info: StepInfo,
}

/// Episodic task driven by the trainer and evaluator.
pub trait Environment {
    type Obs: AgentObservation;

    fn reset(&mut self, episode: usize, rng: &mut Rng) -> Result<Self::Obs>;
    fn step(&mut self, action: Action) -> Result<StepResult<Self::Obs>>;
    /// Info describing the state right after the last reset.
    fn initial_info(&self) -> Option<StepInfo>;
}

/// Angle between the robot heading and the line to the end of row.
pub fn heading_error(pose: &Pose2, eor: Point2) -> f64 {
    wrap_angle((eor - pose.position()).angle() - pose.yaw)
}

pub fn reward_heading(phi: f64) -> f64 {
    1.0 - 2.0 * (phi / PI).abs().sqrt()
}

pub fn reward_distance(d_prev: f64, d_cur: f64) -> f64 {
    d_prev - d_cur
}

pub fn compose_reward(r_h: f64, r_d: f64, outcome: Outcome, cfg: &RewardConfig) -> f64 {
    let terminal = match outcome {
        Outcome::Success => cfg.success,
        Outcome::Collision => cfg.collision,
        Outcome::Reverse => cfg.reverse,
        Outcome::Running | Outcome::Timeout => 0.0,
    };
    cfg.heading_weight * r_h + cfg.distance_weight * r_d + terminal
}

/// Collision > Reverse > Success > Timeout.
pub fn check_termination(
    pose: &Pose2,
    frame: &CorridorFrame,
    step_index: usize,
    world: &VineyardWorld,
    platform: &PlatformSpec,
    yaw_limit: f64,
    max_steps: usize,
) -> Outcome {
    if check_collision(world, pose, platform) {
        return Outcome::Collision;
    }
    let tangent = frame.project(pose.position()).heading;
    if wrap_angle(pose.yaw - tangent).abs() > yaw_limit {
        return Outcome::Reverse;
    }
    if frame.past_exit_gate(pose.position()) {
        return Outcome::Success;
    }
    if step_index >= max_steps {
        return Outcome::Timeout;
    }
    Outcome::Running
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartPose {
    pub corridor: usize,
    pub direction: Direction,
    /// Arclength along the travel-direction median.
    pub arclength: f64,
    /// Offset to the left of travel.
    pub lateral: f64,
    /// Yaw relative to the local tangent.
    pub yaw_offset: f64,
}

#[derive(Debug, Clone)]
struct Episode {
    frame: usize,
    state: RobotState,
    terrain: TerrainDisturbance,
    rng: Rng,
    step: usize,
    distance: f64,
    reference_heading: f64,
    outcome: Outcome,
    initial: StepInfo,
}

/// Single-robot vineyard environment.
#[derive(Debug, Clone)]
pub struct VineyardEnv {
    world: Arc<VineyardWorld>,
    cfg: EnvConfig,
    /// Forward and reverse frame for each corridor.
    frames: Vec<CorridorFrame>,
    cached_start: Option<StartPose>,
    episode: Option<Episode>,
}

impl VineyardEnv {
    pub fn new(world: Arc<VineyardWorld>, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        if let Some(&c) = cfg.episode.start.corridors.iter().find(|&&c| c >= world.corridor_count()) {
            return Err(Error::Config(format!(
                "start corridor {c} out of range (world has {})",
                world.corridor_count()
            )));
        }
        let mut frames = Vec::with_capacity(2 * world.corridor_count());
        for c in 0..world.corridor_count() {
            frames.push(world.corridor_frame(c, Direction::Forward)?);
            frames.push(world.corridor_frame(c, Direction::Reverse)?);
        }
        Ok(Self {
            world,
            cfg,
            frames,
            cached_start: None,
            episode: None,
        })
    }

    pub fn world(&self) -> &Arc<VineyardWorld> {
        &self.world
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn frame(&self, corridor: usize, direction: Direction) -> &CorridorFrame {
        let d = usize::from(direction == Direction::Reverse);
        &self.frames[2 * corridor + d]
    }

    pub fn cached_start(&self) -> Option<StartPose> {
        self.cached_start
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.episode.as_ref().map(|e| e.outcome)
    }

    pub fn robot_state(&self) -> Option<RobotState> {
        self.episode.as_ref().map(|e| e.state)
    }

    /// World pose of a start specification.
    pub fn start_pose(&self, start: &StartPose) -> Pose2 {
        let frame = self.frame(start.corridor, start.direction);
        let (p, heading) = frame.pose_at(start.arclength);
        let q = p + Point2::from_angle(heading).perp() * start.lateral;
        Pose2::new(q.x, q.y, heading + start.yaw_offset)
    }

    /// Draw a collision-free start pose.
    pub fn sample_start(&self, rng: &mut Rng) -> Result<StartPose> {
        let dist = &self.cfg.episode.start;
        for _ in 0..self.cfg.episode.start_retries.max(1) {
            let corridor = if dist.corridors.is_empty() {
                rng.random_range(0..self.world.corridor_count())
            } else {
                dist.corridors[rng.random_range(0..dist.corridors.len())]
            };
            let direction = if rng.random_bool(dist.forward_probability) {
                Direction::Forward
            } else {
                Direction::Reverse
            };
            let length = self.frame(corridor, direction).length;
            let [lo, hi] = dist.arclength_fraction;
            let f = lo + (hi - lo) * rng.random::<f64>();
            let start = StartPose {
                corridor,
                direction,
                arclength: f * length,
                lateral: dist.lateral * (2.0 * rng.random::<f64>() - 1.0),
                yaw_offset: dist.yaw_deg.to_radians() * (2.0 * rng.random::<f64>() - 1.0),
            };
            if !check_collision(&self.world, &self.start_pose(&start), &self.cfg.platform) {
                return Ok(start);
            }
        }
        Err(Error::StartPose(self.cfg.episode.start_retries))
    }

    /// Begin an episode at `start`; `rng` drives terrain and sensor noise for the episode.
    pub fn reset_to(&mut self, start: StartPose, rng: Rng) -> Result<Observation> {
        if start.corridor >= self.world.corridor_count() {
            return Err(Error::Config(format!("corridor {} out of range", start.corridor)));
        }
        let mut rng = rng;
        let pose = self.start_pose(&start);
        if check_collision(&self.world, &pose, &self.cfg.platform) {
            return Err(Error::StartPose(0));
        }
        let frame_idx = 2 * start.corridor + usize::from(start.direction == Direction::Reverse);
        let frame = &self.frames[frame_idx];
        let reference_heading = frame.tangent_at(start.arclength);
        let terrain = TerrainDisturbance::new(&self.cfg.terrain, &mut rng);
        let state = RobotState {
            pose,
            last_action: Action::default(),
        };
        let distance = pose.position().distance(frame.eor);
        let phi = heading_error(&pose, frame.eor);
        let initial = StepInfo {
            step: 0,
            pose,
            distance,
            heading_error: phi,
            reward_heading: reward_heading(phi),
            reward_distance: 0.0,
        };
        let mut episode = Episode {
            frame: frame_idx,
            state,
            terrain,
            rng,
            step: 0,
            distance,
            reference_heading,
            outcome: Outcome::Running,
            initial,
        };
        let pitch = episode.terrain.pitch.value;
        let obs = self.observe(&mut episode, pitch);
        self.episode = Some(episode);
        Ok(obs)
    }

    fn observe(&self, episode: &mut Episode, pitch: f64) -> Observation {
        let pose = &episode.state.pose;
        let p = &self.cfg.platform;
        let camera = CameraPose::from_robot(pose, p.camera_forward, p.camera_up, pitch);
        let clean = render_depth(&self.world, &camera, &self.cfg.camera);
        let depth = apply_noise(&clean, &self.cfg.noise, &mut episode.rng);
        let a = episode.state.last_action;
        Observation {
            depth,
            state: [
                a.v as f32,
                a.omega as f32,
                wrap_angle(pose.yaw - episode.reference_heading) as f32,
            ],
        }
    }
}

impl Environment for VineyardEnv {
    type Obs = Observation;

    /// Redraws the start pose every `reposition_period` episodes.
    fn reset(&mut self, episode: usize, rng: &mut Rng) -> Result<Observation> {
        let start = match self.cached_start {
            Some(s) if !episode.is_multiple_of(self.cfg.episode.reposition_period) => s,
            _ => {
                let s = self.sample_start(rng)?;
                self.cached_start = Some(s);
                s
            }
        };
        let stream = Rng::seed_from_u64(rng.random());
        self.reset_to(start, stream)
    }

    fn step(&mut self, action: Action) -> Result<StepResult<Observation>> {
        action.validate()?;
        let mut episode = match self.episode.take() {
            Some(e) if e.outcome == Outcome::Running => e,
            other => {
                self.episode = other;
                return Err(Error::EpisodeTerminated);
            }
        };
        let dt = self.cfg.episode.dt;
        let (eta, pitch) = episode.terrain.sample(dt, &mut episode.rng);
        episode.state = step_kinematics(&episode.state, action, eta, dt);
        episode.step += 1;
        let frame = &self.frames[episode.frame];
        let pose = episode.state.pose;
        let d_cur = pose.position().distance(frame.eor);
        let phi = heading_error(&pose, frame.eor);
        let outcome = check_termination(
            &pose,
            frame,
            episode.step,
            &self.world,
            &self.cfg.platform,
            self.cfg.reward.yaw_limit(),
            self.cfg.episode.max_steps,
        );
        let r_h = reward_heading(phi);
        let r_d = reward_distance(episode.distance, d_cur);
        let reward = compose_reward(r_h, r_d, outcome, &self.cfg.reward);
        episode.distance = d_cur;
        episode.outcome = outcome;
        let info = StepInfo {
            step: episode.step,
            pose,
            distance: d_cur,
            heading_error: phi,
            reward_heading: r_h,
            reward_distance: r_d,
        };
        let observation = self.observe(&mut episode, pitch);
        self.episode = Some(episode);
        Ok(StepResult {
            observation,
            reward,
            outcome,
            info,
        })
    }

    fn initial_info(&self) -> Option<StepInfo> {
        self.episode.as_ref().map(|e| e.initial)
    }
}

/// One line of an episode log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub v: f64,
    pub omega: f64,
    pub reward: f64,
    pub distance: f64,
    pub heading_error: f64,
    pub outcome: Outcome,
}

impl EpisodeRecord {
    pub fn initial(info: &StepInfo) -> Self {
        Self {
            t: 0,
            x: info.pose.x,
            y: info.pose.y,
            yaw: info.pose.yaw,
            v: 0.0,
            omega: 0.0,
            reward: 0.0,
            distance: info.distance,
            heading_error: info.heading_error,
            outcome: Outcome::Running,
        }
    }

    pub fn from_step(action: Action, reward: f64, outcome: Outcome, info: &StepInfo) -> Self {
        Self {
            t: info.step,
            x: info.pose.x,
            y: info.pose.y,
            yaw: info.pose.yaw,
            v: action.v,
            omega: action.omega,
            reward,
            distance: info.distance,
            heading_error: info.heading_error,
            outcome,
        }
    }
}

pub fn write_episode_csv(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_episode_csv(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}
