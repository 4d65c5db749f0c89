use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{select_training_action, ReplayBuffer, SacAgent, Transition, UpdateStats};
use crate::env::{Action, Environment, Outcome};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub seed: u64,
    /// Receives `training_log.csv` and checkpoints when set.
    pub out_dir: Option<PathBuf>,
    /// Episodes between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Number of leading environment steps whose actions are recorded.
    pub trace_steps: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: None,
            checkpoint_every: 50,
            trace_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub episode_return: f64,
    pub steps: usize,
    pub outcome: Outcome,
    pub epsilon: f64,
    pub explored_fraction: f64,
    /// Means over the updates made during the episode; NaN when there were none.
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
    pub total_steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub agent: SacAgent,
    pub episodes: Vec<EpisodeSummary>,
    pub action_trace: Vec<Action>,
}

#[derive(Default)]
struct Mean {
    sum: UpdateStats,
    n: usize,
}

impl Mean {
    fn add(&mut self, s: &UpdateStats) {
        self.sum.critic1_loss += 0.5 * (s.critic1_loss + s.critic2_loss);
        self.sum.actor_loss += s.actor_loss;
        self.sum.entropy += s.entropy;
        self.n += 1;
    }

    fn get(&self, f: impl Fn(&UpdateStats) -> f64) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            f(&self.sum) / self.n as f64
        }
    }
}

fn checkpoint_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.ckpt"))
}

fn save(agent: &SacAgent, dir: &Path, name: &str, seed: u64, episode: usize, total_steps: usize) -> Result<()> {
    let meta = serde_json::json!({
        "seed": seed,
        "episode": episode,
        "total_steps": total_steps,
        "updates": agent.updates,
        "alpha": agent.temperature.alpha(),
        "sac": agent.cfg,
    });
    agent.checkpoint(meta).save(&checkpoint_path(dir, name))
}

/// Runs `agent.cfg.episodes` episodes of off-policy training.
///
/// Random streams are derived from `opts.seed`: "reset" for episode starts, "explore"
/// for action selection and "update" for minibatches and reparameterization noise.
pub fn train<E: Environment>(
    env: &mut E,
    mut agent: SacAgent,
    opts: &TrainOptions,
    on_episode: &mut dyn FnMut(&EpisodeSummary),
) -> Result<TrainOutput> {
    let cfg = agent.cfg.clone();
    cfg.validate()?;
    let mut reset_rng = substream(opts.seed, "reset");
    let mut explore_rng = substream(opts.seed, "explore");
    let mut update_rng = substream(opts.seed, "update");
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut log = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("training_log.csv");
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            Some(csv::Writer::from_writer(file))
        }
        None => None,
    };
    let mut episodes = Vec::with_capacity(cfg.episodes);
    let mut action_trace = Vec::with_capacity(opts.trace_steps);
    let mut total_steps = 0usize;
    let mut streak = 0usize;

    for episode in 0..cfg.episodes {
        let epsilon = cfg.exploration.epsilon(episode);
        let mut obs = env.reset(episode, &mut reset_rng)?;
        let (mut ret, mut steps, mut explored) = (0.0, 0usize, 0usize);
        let mut mean = Mean::default();
        let outcome = loop {
            let (action, random) = select_training_action(&agent.actor, &obs, epsilon, &mut explore_rng)?;
            if action_trace.len() < opts.trace_steps {
                action_trace.push(action);
            }
            let res = env.step(action)?;
            ret += res.reward;
            steps += 1;
            total_steps += 1;
            explored += usize::from(random);
            buffer.push(Transition {
                obs,
                action,
                reward: res.reward,
                next_obs: res.observation.clone(),
                done: res.outcome.is_done(),
            });
            obs = res.observation;
            if total_steps >= cfg.warmup_steps && buffer.len() >= cfg.batch_size {
                for _ in 0..cfg.updates_per_step {
                    let stats = agent.update(&buffer, &mut update_rng)?;
                    let loss = stats.critic1_loss.max(stats.critic2_loss);
                    streak = if loss > cfg.divergence_ceiling { streak + 1 } else { 0 };
                    if streak >= cfg.divergence_patience {
                        if let Some(dir) = &opts.out_dir {
                            save(&agent, dir, "diverged", opts.seed, episode, total_steps)?;
                        }
                        return Err(Error::Diverged {
                            update: agent.updates,
                            loss,
                            ceiling: cfg.divergence_ceiling,
                            streak,
                        });
                    }
                    mean.add(&stats);
                }
            }
            if res.outcome.is_terminal() {
                break res.outcome;
            }
        };
        let summary = EpisodeSummary {
            episode,
            episode_return: ret,
            steps,
            outcome,
            epsilon,
            explored_fraction: explored as f64 / steps.max(1) as f64,
            critic_loss: mean.get(|s| s.critic1_loss),
            actor_loss: mean.get(|s| s.actor_loss),
            alpha: agent.temperature.alpha(),
            entropy: mean.get(|s| s.entropy),
            total_steps,
        };
        if let Some(w) = log.as_mut() {
            w.serialize(&summary)?;
            w.flush().map_err(|e| Error::io("training_log.csv", e))?;
        }
        on_episode(&summary);
        episodes.push(summary);
        if let Some(dir) = &opts.out_dir {
            if opts.checkpoint_every > 0 && (episode + 1) % opts.checkpoint_every == 0 {
                save(&agent, dir, &format!("episode_{:05}", episode + 1), opts.seed, episode, total_steps)?;
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        save(&agent, dir, "final", opts.seed, cfg.episodes, total_steps)?;
    }
    Ok(TrainOutput {
        agent,
        episodes,
        action_trace,
    })
}

pub fn read_training_log(path: &Path) -> Result<Vec<EpisodeSummary>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
