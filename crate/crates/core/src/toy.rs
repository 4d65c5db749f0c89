//! Low-dimensional corridor task for checking the learner without rendering.
//!
//! The robot advances along x at speed v while ω drives its lateral position y
//! against a constant drift. Leaving |y| < half_width is a collision, reaching
//! x = length is a success.

use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Action, AgentObservation, Environment, Outcome, StepInfo, StepResult};
use crate::error::{Error, Result};
use crate::geometry::Pose2;
use crate::net::ArchSpec;
use crate::rng::Rng;
use crate::sac::{SacAgent, SacConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub length: f64,
    pub half_width: f64,
    /// Lateral drift velocity added to ω.
    pub drift: f64,
    pub lateral_noise: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub start_lateral: f64,
    /// Weight of the centring term 1 − 2|y|/half_width.
    pub heading_weight: f64,
    pub distance_weight: f64,
    pub success_reward: f64,
    pub collision_reward: f64,
    /// Applied to every reward component.
    pub reward_scale: f64,
}

/// Absorbs rounding in the accumulated position so exact progress reaches the exit.
const EXIT_EPS: f64 = 1e-9;

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            length: 5.0,
            half_width: 1.0,
            drift: 0.2,
            lateral_noise: 0.02,
            dt: 0.2,
            max_steps: 200,
            start_lateral: 0.3,
            heading_weight: 10.0,
            distance_weight: 35.0,
            success_reward: 1000.0,
            collision_reward: -500.0,
            reward_scale: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyObservation {
    /// [v_prev, ω_prev, y].
    pub state: [f32; 3],
}

impl AgentObservation for ToyObservation {
    fn image(&self) -> &[f32] {
        &[]
    }

    fn vector(&self) -> &[f32] {
        &self.state
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorridor {
    cfg: ToyConfig,
    x: f64,
    y: f64,
    last: Action,
    step: usize,
    outcome: Option<Outcome>,
    noise: Rng,
    info: Option<StepInfo>,
}

impl ToyCorridor {
    pub fn new(cfg: ToyConfig) -> Result<Self> {
        if !(cfg.length > 0.0 && cfg.half_width > 0.0 && cfg.dt > 0.0 && cfg.max_steps > 0) {
            return Err(Error::Config("toy corridor needs positive length, width, dt and max_steps".into()));
        }
        if !(cfg.start_lateral >= 0.0 && cfg.start_lateral < cfg.half_width) {
            return Err(Error::Config("start_lateral must lie in [0, half_width)".into()));
        }
        Ok(Self {
            cfg,
            x: 0.0,
            y: 0.0,
            last: Action::default(),
            step: 0,
            outcome: None,
            noise: Rng::seed_from_u64(0),
            info: None,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    fn observation(&self) -> ToyObservation {
        ToyObservation {
            state: [self.last.v as f32, self.last.omega as f32, self.y as f32],
        }
    }

    fn info(&self, r_h: f64, r_d: f64) -> StepInfo {
        StepInfo {
            step: self.step,
            pose: Pose2::new(self.x, self.y, 0.0),
            distance: self.cfg.length - self.x,
            heading_error: 0.0,
            reward_heading: r_h,
            reward_distance: r_d,
        }
    }
}

impl Environment for ToyCorridor {
    type Obs = ToyObservation;

    fn reset(&mut self, _episode: usize, rng: &mut Rng) -> Result<ToyObservation> {
        let s = self.cfg.start_lateral;
        self.x = 0.0;
        self.y = if s > 0.0 { rng.random_range(-s..s) } else { 0.0 };
        self.last = Action::default();
        self.step = 0;
        self.outcome = Some(Outcome::Running);
        self.noise = Rng::seed_from_u64(rng.random());
        self.info = Some(self.info(0.0, 0.0));
        Ok(self.observation())
    }

    fn step(&mut self, action: Action) -> Result<StepResult<ToyObservation>> {
        match self.outcome {
            Some(Outcome::Running) => {}
            _ => return Err(Error::EpisodeTerminated),
        }
        action.validate()?;
        let c = &self.cfg;
        let xi: f64 = self.noise.sample(StandardNormal);
        let d_prev = c.length - self.x;
        self.x += action.v * c.dt;
        self.y += (action.omega + c.drift) * c.dt + c.lateral_noise * c.dt.sqrt() * xi;
        self.last = action;
        self.step += 1;
        let outcome = if self.y.abs() >= c.half_width {
            Outcome::Collision
        } else if self.x >= c.length - EXIT_EPS {
            Outcome::Success
        } else if self.step >= c.max_steps {
            Outcome::Timeout
        } else {
            Outcome::Running
        };
        let r_h = 1.0 - 2.0 * (self.y.abs() / c.half_width).min(1.0);
        let r_d = d_prev - (c.length - self.x);
        let terminal = match outcome {
            Outcome::Success => c.success_reward,
            Outcome::Collision => c.collision_reward,
            _ => 0.0,
        };
        let reward = c.reward_scale * (c.heading_weight * r_h + c.distance_weight * r_d + terminal);
        self.outcome = Some(outcome);
        let info = self.info(r_h, r_d);
        self.info = Some(info);
        Ok(StepResult {
            observation: self.observation(),
            reward,
            outcome,
            info,
        })
    }

    fn initial_info(&self) -> Option<StepInfo> {
        self.info
    }
}

/// Actor and critic perceptrons sized for the toy corridor.
pub fn toy_agent(cfg: SacConfig, hidden: &[usize], rng: &mut Rng) -> Result<SacAgent> {
    SacAgent::new(
        ArchSpec::mlp("toy_actor", 3, hidden, 4),
        ArchSpec::mlp("toy_critic", 5, hidden, 1),
        cfg,
        rng,
    )
}

/// Learner settings scaled down to the toy's horizon.
pub fn toy_sac_config() -> SacConfig {
    SacConfig {
        batch_size: 64,
        replay_capacity: 50_000,
        warmup_steps: 500,
        episodes: 200,
        lr: 1e-3,
        ..SacConfig::default()
    }
}
