//! Soft Actor-Critic with twin critics, target smoothing, automatic temperature and
//! an ε-greedy overlay that replaces the whole action with a uniform draw.

mod train;

pub use train::{read_training_log, train, EpisodeSummary, TrainOptions, TrainOutput};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{Action, AgentObservation};
use crate::error::{Error, Result};
use crate::net::policy::{backprop_sample, draw_noise, sample_full, sample_with_noise};
use crate::net::{Adam, AdamConfig, ArchSpec, Checkpoint, Network, PolicyOutput, Real, Tape};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AlphaMode {
    Auto { initial: f64, target_entropy: f64 },
    Fixed { value: f64 },
}

/// Per-episode exploration probability ε(n) = max(ε_min, ε₀·decayⁿ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorationSchedule {
    pub initial: f64,
    pub decay: f64,
    pub min: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        Self {
            initial: 1.0,
            decay: 0.992,
            min: 0.05,
        }
    }
}

impl ExplorationSchedule {
    pub fn epsilon(&self, episode: usize) -> f64 {
        let exp = i32::try_from(episode).unwrap_or(i32::MAX);
        (self.initial * self.decay.powi(exp)).max(self.min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub tau: f64,
    pub alpha: AlphaMode,
    pub warmup_steps: usize,
    pub updates_per_step: usize,
    pub episodes: usize,
    pub exploration: ExplorationSchedule,
    /// Critic loss above which an update counts towards the divergence streak.
    pub divergence_ceiling: f64,
    pub divergence_patience: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 2e-4,
            batch_size: 256,
            replay_capacity: 200_000,
            tau: 0.005,
            alpha: AlphaMode::Auto {
                initial: 1.0,
                target_entropy: -2.0,
            },
            warmup_steps: 1000,
            updates_per_step: 1,
            episodes: 1500,
            exploration: ExplorationSchedule::default(),
            divergence_ceiling: 1e9,
            divergence_patience: 200,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        if !(self.lr > 0.0 && self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("lr must be > 0 and tau in (0, 1]".into()));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::Config("need 0 < batch_size <= replay_capacity".into()));
        }
        match self.alpha {
            AlphaMode::Auto { initial, .. } | AlphaMode::Fixed { value: initial } if !(initial >= 0.0) => {
                return Err(Error::Config("alpha must be >= 0".into()));
            }
            AlphaMode::Auto { initial: 0.0, .. } => {
                return Err(Error::Config("auto-tuned alpha needs a positive initial value".into()));
            }
            _ => {}
        }
        let e = &self.exploration;
        if !((0.0..=1.0).contains(&e.initial) && (0.0..=1.0).contains(&e.min) && e.decay > 0.0 && e.decay <= 1.0) {
            return Err(Error::Config("exploration schedule values must lie in [0, 1]".into()));
        }
        if self.divergence_patience == 0 || !(self.divergence_ceiling > 0.0) {
            return Err(Error::Config("divergence guard needs positive ceiling and patience".into()));
        }
        Ok(())
    }
}

/// Agent-visible transition; done is false for timeouts.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<O> {
    pub obs: O,
    pub action: Action,
    pub reward: f64,
    pub next_obs: O,
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<O> {
    capacity: usize,
    items: Vec<Transition<O>>,
    next: usize,
}

impl<O> ReplayBuffer<O> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition<O>) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<&Transition<O>> {
        self.sample_indices(n, rng).into_iter().map(|i| &self.items[i]).collect()
    }

    pub fn get(&self, i: usize) -> Option<&Transition<O>> {
        self.items.get(i)
    }
}

/// Dense minibatch in network precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub size: usize,
    pub images: Vec<T>,
    pub states: Vec<T>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub next_images: Vec<T>,
    pub next_states: Vec<T>,
    pub dones: Vec<bool>,
}

impl<T: Real> Batch<T> {
    pub fn from_transitions<O: AgentObservation>(items: &[&Transition<O>]) -> Self {
        let mut b = Batch {
            size: items.len(),
            images: Vec::new(),
            states: Vec::new(),
            actions: Vec::with_capacity(items.len()),
            rewards: Vec::with_capacity(items.len()),
            next_images: Vec::new(),
            next_states: Vec::new(),
            dones: Vec::with_capacity(items.len()),
        };
        let conv = |xs: &[f32], out: &mut Vec<T>| out.extend(xs.iter().map(|&x| T::of(f64::from(x))));
        for t in items {
            conv(t.obs.image(), &mut b.images);
            conv(t.obs.vector(), &mut b.states);
            conv(t.next_obs.image(), &mut b.next_images);
            conv(t.next_obs.vector(), &mut b.next_states);
            b.actions.push(t.action);
            b.rewards.push(t.reward);
            b.dones.push(t.done);
        }
        b
    }

    pub fn state_dim(&self) -> usize {
        self.states.len() / self.size.max(1)
    }
}

/// Critic inputs: state vector followed by (v, ω).
pub fn critic_extras<T: Real>(states: &[T], actions: &[Action]) -> Vec<T> {
    let n = actions.len();
    let s = states.len() / n.max(1);
    let mut out = Vec::with_capacity(n * (s + 2));
    for (i, a) in actions.iter().enumerate() {
        out.extend_from_slice(&states[i * s..(i + 1) * s]);
        out.push(T::of(a.v));
        out.push(T::of(a.omega));
    }
    out
}

pub fn policy_outputs<T: Real>(raw: &[T]) -> Vec<PolicyOutput> {
    raw.chunks_exact(4)
        .map(|r| PolicyOutput::from_raw(&[r[0].f64(), r[1].f64(), r[2].f64(), r[3].f64()]))
        .collect()
}

/// y = r + γ(1 − done)(min(Q'₁, Q'₂)(s', a') − α·log π(a'|s')) with a' drawn from
/// `noise`; done rows are exactly r.
#[allow(clippy::too_many_arguments)]
pub fn bellman_targets<T: Real>(
    actor: &Network<T>,
    target1: &Network<T>,
    target2: &Network<T>,
    batch: &Batch<T>,
    alpha: f64,
    gamma: f64,
    noise: &[[f64; 2]],
) -> Result<Vec<f64>> {
    let b = batch.size;
    let raw = actor.forward(&batch.next_images, &batch.next_states, b, None)?;
    let samples: Vec<_> = policy_outputs(&raw)
        .iter()
        .zip(noise)
        .map(|(o, &e)| sample_with_noise(o, e))
        .collect();
    let next_actions: Vec<Action> = samples.iter().map(|s| s.action).collect();
    let extras = critic_extras(&batch.next_states, &next_actions);
    let q1 = target1.forward(&batch.next_images, &extras, b, None)?;
    let q2 = target2.forward(&batch.next_images, &extras, b, None)?;
    let mut y = Vec::with_capacity(b);
    for i in 0..b {
        let target = if batch.dones[i] {
            batch.rewards[i]
        } else {
            let soft = q1[i].f64().min(q2[i].f64()) - alpha * samples[i].log_prob;
            batch.rewards[i] + gamma * soft
        };
        if !target.is_finite() {
            return Err(Error::NonFinite(format!(
                "Bellman target for sample {i}: r = {}, q1' = {}, q2' = {}, log_prob = {}",
                batch.rewards[i],
                q1[i].f64(),
                q2[i].f64(),
                samples[i].log_prob
            )));
        }
        y.push(target);
    }
    Ok(y)
}

/// Mean squared Bellman error and its parameter gradient.
pub fn critic_loss_grad<T: Real>(critic: &Network<T>, batch: &Batch<T>, targets: &[f64]) -> Result<(f64, Vec<T>)> {
    let b = batch.size;
    let extras = critic_extras(&batch.states, &batch.actions);
    let mut tape = Tape::default();
    let q = critic.forward(&batch.images, &extras, b, Some(&mut tape))?;
    let mut loss = 0.0;
    let mut d = Vec::with_capacity(b);
    for i in 0..b {
        let e = q[i].f64() - targets[i];
        loss += e * e / b as f64;
        d.push(T::of(2.0 * e / b as f64));
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss".into()));
    }
    let mut grads = vec![T::zero(); critic.param_count()];
    critic.backward(&tape, &d, Some(&mut grads))?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorStep<T> {
    pub loss: f64,
    pub grads: Vec<T>,
    pub mean_log_prob: f64,
}

/// Mean of α·log π(ã|s) − min(Q₁, Q₂)(s, ã) over reparameterized ã; critics stay fixed.
pub fn actor_loss_grad<T: Real>(
    actor: &Network<T>,
    critic1: &Network<T>,
    critic2: &Network<T>,
    batch: &Batch<T>,
    alpha: f64,
    noise: &[[f64; 2]],
) -> Result<ActorStep<T>> {
    let b = batch.size;
    let mut actor_tape = Tape::default();
    let raw = actor.forward(&batch.images, &batch.states, b, Some(&mut actor_tape))?;
    let outs = policy_outputs(&raw);
    let samples: Vec<_> = outs.iter().zip(noise).map(|(o, &e)| sample_with_noise(o, e)).collect();
    let actions: Vec<Action> = samples.iter().map(|s| s.action).collect();
    let extras = critic_extras(&batch.states, &actions);
    let (mut t1, mut t2) = (Tape::default(), Tape::default());
    let q1 = critic1.forward(&batch.images, &extras, b, Some(&mut t1))?;
    let q2 = critic2.forward(&batch.images, &extras, b, Some(&mut t2))?;
    let inv = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut mean_log_prob = 0.0;
    let mut d1 = vec![T::zero(); b];
    let mut d2 = vec![T::zero(); b];
    for i in 0..b {
        let (a, c) = (q1[i].f64(), q2[i].f64());
        loss += (alpha * samples[i].log_prob - a.min(c)) * inv;
        mean_log_prob += samples[i].log_prob * inv;
        if a <= c {
            d1[i] = T::of(-inv);
        } else {
            d2[i] = T::of(-inv);
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("actor loss".into()));
    }
    let g1 = critic1.backward(&t1, &d1, None)?;
    let g2 = critic2.backward(&t2, &d2, None)?;
    let width = g1.len() / b;
    let mut d_raw = Vec::with_capacity(4 * b);
    for i in 0..b {
        let j = i * width + width - 2;
        let d_action = [(g1[j] + g2[j]).f64(), (g1[j + 1] + g2[j + 1]).f64()];
        let g = backprop_sample(&outs[i], &samples[i], d_action, alpha * inv);
        d_raw.extend(g.iter().map(|&x| T::of(x)));
    }
    let mut grads = vec![T::zero(); actor.param_count()];
    actor.backward(&actor_tape, &d_raw, Some(&mut grads))?;
    Ok(ActorStep {
        loss,
        grads,
        mean_log_prob,
    })
}

/// θ' ← τ·θ + (1 − τ)·θ'.
pub fn soft_update<T: Real>(target: &mut Network<T>, online: &Network<T>, tau: f64) -> Result<()> {
    if target.arch() != online.arch() {
        return Err(Error::Shape {
            expected: target.arch().name.clone(),
            actual: online.arch().name.clone(),
        });
    }
    let tau_t = T::of(tau);
    let keep = T::of(1.0 - tau);
    for (t, &o) in target.params_mut().iter_mut().zip(online.params()) {
        *t = tau_t * o + keep * *t;
    }
    Ok(())
}

/// Temperature as log α with its own optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Temperature {
    pub log_alpha: f64,
    target_entropy: Option<f64>,
    opt: Adam<f64>,
}

impl Temperature {
    pub fn new(mode: AlphaMode, lr: f64) -> Self {
        let (log_alpha, target_entropy) = match mode {
            AlphaMode::Auto { initial, target_entropy } => (initial.ln(), Some(target_entropy)),
            AlphaMode::Fixed { value } => (value.ln(), None),
        };
        Self {
            log_alpha,
            target_entropy,
            opt: Adam::new(AdamConfig { lr, ..AdamConfig::default() }, 1),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// ∂/∂log α of −log α·(E[log π] + H̄).
    pub fn gradient(&self, mean_log_prob: f64) -> f64 {
        match self.target_entropy {
            Some(h) => -(mean_log_prob + h),
            None => 0.0,
        }
    }

    /// One step towards E[−log π] = target entropy; no-op in fixed mode.
    pub fn update(&mut self, mean_log_prob: f64) -> f64 {
        if self.target_entropy.is_some() {
            let mut p = [self.log_alpha];
            self.opt.step(&mut p, &[self.gradient(mean_log_prob)]);
            self.log_alpha = p[0];
        }
        self.alpha()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
}

/// Online and target networks with their optimizers.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub actor: Network<f32>,
    pub critic1: Network<f32>,
    pub critic2: Network<f32>,
    pub target1: Network<f32>,
    pub target2: Network<f32>,
    actor_opt: Adam<f32>,
    critic1_opt: Adam<f32>,
    critic2_opt: Adam<f32>,
    pub temperature: Temperature,
    pub updates: u64,
}

impl SacAgent {
    pub fn new(actor_arch: ArchSpec, critic_arch: ArchSpec, cfg: SacConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let actor = Network::init(actor_arch, rng)?;
        let critic1 = Network::init(critic_arch.clone(), rng)?;
        let critic2 = Network::init(critic_arch, rng)?;
        if actor.output_dim() != 4 || critic1.output_dim() != 1 || critic1.extra_dim() != actor.extra_dim() + 2 {
            return Err(Error::Shape {
                expected: "actor with 4 outputs, critic with 1 output over state + action".into(),
                actual: format!(
                    "actor {} outputs, critic {} outputs / {} extra inputs",
                    actor.output_dim(),
                    critic1.output_dim(),
                    critic1.extra_dim()
                ),
            });
        }
        Ok(Self::from_networks(actor, critic1, critic2, cfg))
    }

    pub fn from_networks(actor: Network<f32>, critic1: Network<f32>, critic2: Network<f32>, cfg: SacConfig) -> Self {
        let adam = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        Self {
            actor_opt: Adam::new(adam, actor.param_count()),
            critic1_opt: Adam::new(adam, critic1.param_count()),
            critic2_opt: Adam::new(adam, critic2.param_count()),
            target1: critic1.clone(),
            target2: critic2.clone(),
            temperature: Temperature::new(cfg.alpha, cfg.lr),
            actor,
            critic1,
            critic2,
            cfg,
            updates: 0,
        }
    }

    pub fn policy<O: AgentObservation>(&self, obs: &O) -> Result<PolicyOutput> {
        policy_output(&self.actor, obs)
    }

    /// Critic step, actor step, temperature step, then target smoothing.
    pub fn update<O: AgentObservation>(&mut self, buffer: &ReplayBuffer<O>, rng: &mut Rng) -> Result<UpdateStats> {
        let items = buffer.sample(self.cfg.batch_size, rng);
        let batch = Batch::<f32>::from_transitions(&items);
        self.update_on(&batch, rng)
    }

    pub fn update_on(&mut self, batch: &Batch<f32>, rng: &mut Rng) -> Result<UpdateStats> {
        let alpha = self.temperature.alpha();
        let noise: Vec<[f64; 2]> = (0..batch.size).map(|_| draw_noise(rng)).collect();
        let y = bellman_targets(
            &self.actor,
            &self.target1,
            &self.target2,
            batch,
            alpha,
            self.cfg.gamma,
            &noise,
        )?;
        let (l1, g1) = critic_loss_grad(&self.critic1, batch, &y)?;
        let (l2, g2) = critic_loss_grad(&self.critic2, batch, &y)?;
        self.critic1_opt.step(self.critic1.params_mut(), &g1);
        self.critic2_opt.step(self.critic2.params_mut(), &g2);
        let noise: Vec<[f64; 2]> = (0..batch.size).map(|_| draw_noise(rng)).collect();
        let step = actor_loss_grad(&self.actor, &self.critic1, &self.critic2, batch, alpha, &noise)?;
        self.actor_opt.step(self.actor.params_mut(), &step.grads);
        let alpha = self.temperature.update(step.mean_log_prob);
        soft_update(&mut self.target1, &self.critic1, self.cfg.tau)?;
        soft_update(&mut self.target2, &self.critic2, self.cfg.tau)?;
        self.updates += 1;
        Ok(UpdateStats {
            critic1_loss: l1,
            critic2_loss: l2,
            actor_loss: step.loss,
            alpha,
            entropy: -step.mean_log_prob,
        })
    }

    pub fn checkpoint(&self, metadata: serde_json::Value) -> Checkpoint {
        Checkpoint::new(metadata)
            .with("actor", &self.actor)
            .with("critic1", &self.critic1)
            .with("critic2", &self.critic2)
            .with("target1", &self.target1)
            .with("target2", &self.target2)
    }
}

pub fn policy_output<O: AgentObservation>(actor: &Network<f32>, obs: &O) -> Result<PolicyOutput> {
    let raw = actor.forward_one(obs.image(), obs.vector())?;
    Ok(policy_outputs(&raw)[0])
}

/// With probability ε a uniform action over the whole box, otherwise a policy sample.
/// Returns the action and whether it was exploratory.
pub fn select_training_action<O: AgentObservation>(
    actor: &Network<f32>,
    obs: &O,
    epsilon: f64,
    rng: &mut Rng,
) -> Result<(Action, bool)> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok((Action::sample_uniform(rng), true));
    }
    let out = policy_output(actor, obs)?;
    Ok((sample_full(&out, rng).action, false))
}

#[cfg(test)]
mod tests;
