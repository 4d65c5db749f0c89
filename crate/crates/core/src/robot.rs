//! Unicycle kinematics, terrain disturbance and footprint collision.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point2, Pose2};
use crate::world::VineyardWorld;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2,
    /// Last commanded velocities.
    pub last_action: Action,
}

/// Rectangular footprint and camera mount of a ground robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformSpec {
    pub name: String,
    pub length: f64,
    pub width: f64,
    pub camera_forward: f64,
    pub camera_up: f64,
}

impl PlatformSpec {
    pub fn jackal() -> Self {
        Self {
            name: "jackal".into(),
            length: 0.508,
            width: 0.430,
            camera_forward: 0.2,
            camera_up: 0.3,
        }
    }

    pub fn husky() -> Self {
        Self {
            name: "husky".into(),
            length: 0.990,
            width: 0.670,
            camera_forward: 0.2,
            camera_up: 0.55,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "jackal" => Some(Self::jackal()),
            "husky" => Some(Self::husky()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.width > 0.0 && self.camera_up > 0.0) {
            return Err(Error::Config(format!(
                "platform {}: length, width and camera height must be > 0",
                self.name
            )));
        }
        Ok(())
    }
}

impl Default for PlatformSpec {
    fn default() -> Self {
        Self::jackal()
    }
}

/// Mean-reverting (Ornstein-Uhlenbeck) process sampled exactly on a fixed grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuProcess {
    /// Reversion rate in 1/s.
    pub reversion: f64,
    /// Stationary standard deviation.
    pub sigma: f64,
    pub value: f64,
}

impl OuProcess {
    /// Start from a draw of the stationary distribution.
    pub fn stationary<R: Rng + ?Sized>(reversion: f64, sigma: f64, rng: &mut R) -> Self {
        let z: f64 = rng.sample(StandardNormal);
        Self {
            reversion,
            sigma,
            value: sigma * z,
        }
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> f64 {
        let a = (-self.reversion * dt).exp();
        let z: f64 = rng.sample(StandardNormal);
        self.value = a * self.value + self.sigma * (1.0 - a * a).sqrt() * z;
        self.value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainConfig {
    pub yaw_rate_sigma: f64,
    pub yaw_rate_reversion: f64,
    pub pitch_sigma: f64,
    pub pitch_reversion: f64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            yaw_rate_sigma: 0.08,
            yaw_rate_reversion: 5.0,
            pitch_sigma: 0.02,
            pitch_reversion: 5.0,
        }
    }
}

impl TerrainConfig {
    pub fn flat() -> Self {
        Self {
            yaw_rate_sigma: 0.0,
            pitch_sigma: 0.0,
            ..Self::default()
        }
    }
}

/// Yaw-rate and camera-pitch disturbances caused by uneven ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainDisturbance {
    pub yaw_rate: OuProcess,
    pub pitch: OuProcess,
}

impl TerrainDisturbance {
    pub fn new<R: Rng + ?Sized>(cfg: &TerrainConfig, rng: &mut R) -> Self {
        Self {
            yaw_rate: OuProcess::stationary(cfg.yaw_rate_reversion, cfg.yaw_rate_sigma, rng),
            pitch: OuProcess::stationary(cfg.pitch_reversion, cfg.pitch_sigma, rng),
        }
    }

    /// Advance both processes by `dt`; returns (η_ω, η_pitch).
    pub fn sample<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> (f64, f64) {
        (self.yaw_rate.advance(dt, rng), self.pitch.advance(dt, rng))
    }
}

/// Explicit Euler unicycle step; the yaw-rate disturbance adds to the commanded ω.
pub fn step_kinematics(state: &RobotState, action: Action, yaw_disturbance: f64, dt: f64) -> RobotState {
    let Pose2 { x, y, yaw } = state.pose;
    RobotState {
        pose: Pose2 {
            x: x + action.v * yaw.cos() * dt,
            y: y + action.v * yaw.sin() * dt,
            yaw: wrap_angle(yaw + (action.omega + yaw_disturbance) * dt),
        },
        last_action: action,
    }
}

/// Whether an oriented `length × width` rectangle centred at `pose` overlaps a disc.
pub fn footprint_hits_circle(pose: &Pose2, length: f64, width: f64, center: Point2, radius: f64) -> bool {
    let (s, c) = pose.yaw.sin_cos();
    let d = center - pose.position();
    let local = Point2::new(d.x * c + d.y * s, -d.x * s + d.y * c);
    let hx = 0.5 * length;
    let hy = 0.5 * width;
    let nearest = Point2::new(local.x.clamp(-hx, hx), local.y.clamp(-hy, hy));
    let gap = local - nearest;
    gap.dot(gap) <= radius * radius
}

pub fn check_collision(world: &VineyardWorld, pose: &Pose2, platform: &PlatformSpec) -> bool {
    let half_diag = 0.5 * platform.length.hypot(platform.width);
    world
        .nearby_plants(pose.position(), half_diag)
        .into_iter()
        .any(|p| footprint_hits_circle(pose, platform.length, platform.width, p.position, p.trunk_radius))
}
