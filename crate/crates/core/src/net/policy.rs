//! Squashed Gaussian policy: u ~ N(μ, σ²), v = 0.25·(tanh u₀ + 1), ω = tanh u₁.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::Action;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const V_SCALE: f64 = 0.25;

/// Raw actor head: per-action mean and (clamped) log standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub mean: [f64; 2],
    pub log_std: [f64; 2],
    /// Whether each log σ was clamped (zero gradient there).
    #[serde(skip)]
    clamped: [bool; 2],
}

impl PolicyOutput {
    pub fn new(mean: [f64; 2], raw_log_std: [f64; 2]) -> Self {
        Self::with_bounds(mean, raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
    }

    pub fn with_bounds(mean: [f64; 2], raw_log_std: [f64; 2], lo: f64, hi: f64) -> Self {
        let clamp = |x: f64| x.clamp(lo, hi);
        Self {
            mean,
            log_std: [clamp(raw_log_std[0]), clamp(raw_log_std[1])],
            clamped: [
                raw_log_std[0] < lo || raw_log_std[0] > hi,
                raw_log_std[1] < lo || raw_log_std[1] > hi,
            ],
        }
    }

    /// From the four raw network outputs (μ_v, μ_ω, log σ_v, log σ_ω).
    pub fn from_raw(raw: &[f64]) -> Self {
        Self::new([raw[0], raw[1]], [raw[2], raw[3]])
    }

    pub fn std(&self) -> [f64; 2] {
        [self.log_std[0].exp(), self.log_std[1].exp()]
    }
}

/// Squash pre-activation `u` into the action box.
pub fn squash(u: [f64; 2]) -> Action {
    Action {
        v: V_SCALE * (u[0].tanh() + 1.0),
        omega: u[1].tanh(),
    }
}

/// log(1 − tanh²u) without cancellation.
fn log_one_minus_tanh2(u: f64) -> f64 {
    let a = u.abs();
    2.0 * (LN_2 - a - (-2.0 * a).exp().ln_1p())
}

/// Log density of the action produced by `u = μ + σ·ε`.
pub fn log_prob_from_noise(out: &PolicyOutput, eps: [f64; 2]) -> f64 {
    let mut lp = (1.0 / V_SCALE).ln();
    for i in 0..2 {
        let u = out.mean[i] + out.log_std[i].exp() * eps[i];
        lp += -0.5 * eps[i] * eps[i] - out.log_std[i] - 0.5 * (2.0 * PI).ln() - log_one_minus_tanh2(u);
    }
    lp
}

/// Log density of an action strictly inside the box.
pub fn log_prob(out: &PolicyOutput, action: Action) -> f64 {
    let raw0 = (action.v / V_SCALE - 1.0).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
    let raw1 = action.omega.clamp(-1.0 + 1e-15, 1.0 - 1e-15);
    let u = [raw0.atanh(), raw1.atanh()];
    let std = out.std();
    let eps = [(u[0] - out.mean[0]) / std[0], (u[1] - out.mean[1]) / std[1]];
    log_prob_from_noise(out, eps)
}

/// A reparameterized draw with everything needed for the backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquashedSample {
    pub action: Action,
    pub log_prob: f64,
    pub eps: [f64; 2],
    pub u: [f64; 2],
}

pub fn sample_with_noise(out: &PolicyOutput, eps: [f64; 2]) -> SquashedSample {
    let std = out.std();
    let u = [out.mean[0] + std[0] * eps[0], out.mean[1] + std[1] * eps[1]];
    SquashedSample {
        action: squash(u),
        log_prob: log_prob_from_noise(out, eps),
        eps,
        u,
    }
}

pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

pub fn sample_full<R: Rng + ?Sized>(out: &PolicyOutput, rng: &mut R) -> SquashedSample {
    sample_with_noise(out, draw_noise(rng))
}

pub fn sample_action<R: Rng + ?Sized>(out: &PolicyOutput, rng: &mut R) -> (Action, f64) {
    let s = sample_full(out, rng);
    (s.action, s.log_prob)
}

/// Mean action; consumes no randomness.
pub fn deterministic_action(out: &PolicyOutput) -> Action {
    squash(out.mean)
}

/// Gradient of `L(action, log_prob)` with respect to the four raw outputs, given
/// ∂L/∂(v, ω) and ∂L/∂log_prob at a reparameterized sample.
pub fn backprop_sample(out: &PolicyOutput, s: &SquashedSample, d_action: [f64; 2], d_log_prob: f64) -> [f64; 4] {
    let std = out.std();
    let scale = [V_SCALE, 1.0];
    let mut g = [0.0; 4];
    for i in 0..2 {
        let t = s.u[i].tanh();
        let du = d_action[i] * scale[i] * (1.0 - t * t) + d_log_prob * 2.0 * t;
        g[i] = du;
        g[2 + i] = if out.clamped[i] {
            0.0
        } else {
            du * std[i] * s.eps[i] - d_log_prob
        };
    }
    g
}
