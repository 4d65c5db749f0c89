use super::*;
use crate::env::{Environment, Outcome};
use crate::net::policy::sample_action;
use crate::rng::substream;
use crate::toy::{toy_agent, toy_sac_config, ToyConfig, ToyCorridor, ToyObservation};

fn obs(y: f32) -> ToyObservation {
    ToyObservation { state: [0.1, -0.2, y] }
}

fn transition(i: usize, reward: f64, done: bool) -> Transition<ToyObservation> {
    let y = i as f32 * 0.01;
    Transition {
        obs: obs(y),
        action: Action::new(0.2, 0.1 * (i % 7) as f64 - 0.3),
        reward,
        next_obs: obs(y + 0.05),
        done,
    }
}

fn batch_of(items: &[Transition<ToyObservation>]) -> Batch<f64> {
    let refs: Vec<_> = items.iter().collect();
    Batch::from_transitions(&refs)
}

fn nets(seed: u64, hidden: &[usize]) -> (Network<f64>, Network<f64>, Network<f64>) {
    let mut rng = substream(seed, "nets");
    let actor = Network::init(ArchSpec::mlp("a", 3, hidden, 4), &mut rng).unwrap();
    let c1 = Network::init(ArchSpec::mlp("c", 5, hidden, 1), &mut rng).unwrap();
    let c2 = Network::init(ArchSpec::mlp("c", 5, hidden, 1), &mut rng).unwrap();
    (actor, c1, c2)
}

fn noise(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = substream(seed, "noise");
    (0..n).map(|_| draw_noise(&mut rng)).collect()
}

#[test]
fn epsilon_schedule_values_and_floor() {
    let s = ExplorationSchedule::default();
    assert_eq!(s.epsilon(0), 1.0);
    assert!((s.epsilon(1) - 0.992).abs() < 1e-15);
    assert!((s.epsilon(100) - 0.992f64.powi(100)).abs() < 1e-15);
    assert_eq!(s.epsilon(400), 0.05);
    assert_eq!(s.epsilon(usize::MAX), 0.05);
    for n in 0..2000 {
        assert!(s.epsilon(n + 1) <= s.epsilon(n));
    }
}

#[test]
fn replay_overwrites_oldest() {
    let mut buf = ReplayBuffer::new(3);
    for i in 0..5 {
        buf.push(transition(i, i as f64, false));
    }
    assert_eq!(buf.len(), 3);
    let rewards: Vec<f64> = (0..3).map(|i| buf.get(i).unwrap().reward).collect();
    assert_eq!(rewards, vec![3.0, 4.0, 2.0]);
}

#[test]
fn replay_sampling_is_uniform() {
    let n = 20;
    let mut buf = ReplayBuffer::new(n);
    for i in 0..n {
        buf.push(transition(i, 0.0, false));
    }
    let draws = 100_000;
    let mut counts = vec![0usize; n];
    for i in buf.sample_indices(draws, &mut substream(4, "replay")) {
        counts[i] += 1;
    }
    let p = 1.0 / n as f64;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        // 4σ per index keeps the joint false-alarm rate below 0.2%.
        assert!((c as f64 - draws as f64 * p).abs() < 4.0 * sigma, "{c}");
    }
}

#[test]
fn full_exploration_is_uniform_over_the_box() {
    let mut rng = substream(5, "explore");
    let actor = toy_agent(toy_sac_config(), &[8], &mut rng).unwrap().actor;
    let bins = 4;
    let n = 40_000;
    let mut counts = vec![0usize; bins * bins];
    for _ in 0..n {
        let (a, explored) = select_training_action(&actor, &obs(0.0), 1.0, &mut rng).unwrap();
        assert!(explored);
        let i = ((a.v / 0.5 * bins as f64) as usize).min(bins - 1);
        let j = (((a.omega + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
        counts[i * bins + j] += 1;
    }
    let e = n as f64 / (bins * bins) as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // χ² with 15 degrees of freedom: 99.9th percentile is 37.7.
    assert!(chi2 < 37.7, "chi2 = {chi2}");
}

#[test]
fn zero_epsilon_matches_policy_stream() {
    let mut rng = substream(6, "init");
    let actor = toy_agent(toy_sac_config(), &[8], &mut rng).unwrap().actor;
    let o = obs(0.3);
    let out = policy_output(&actor, &o).unwrap();
    let mut a_rng = substream(6, "a");
    let mut b_rng = substream(6, "a");
    for _ in 0..50 {
        let (a, explored) = select_training_action(&actor, &o, 0.0, &mut a_rng).unwrap();
        assert!(!explored);
        assert_eq!(a, sample_action(&out, &mut b_rng).0);
    }
}

#[test]
fn terminal_targets_are_exactly_the_reward() {
    let (actor, c1, c2) = nets(7, &[16]);
    let items: Vec<_> = (0..8).map(|i| transition(i, 1.5 * i as f64 - 3.0, i % 2 == 0)).collect();
    let b = batch_of(&items);
    let y = bellman_targets(&actor, &c1, &c2, &b, 0.3, 0.99, &noise(8, 7)).unwrap();
    for (i, t) in items.iter().enumerate() {
        if t.done {
            assert_eq!(y[i], t.reward);
        } else {
            assert_ne!(y[i], t.reward);
        }
    }
    let y0 = bellman_targets(&actor, &c1, &c2, &b, 0.3, 0.0, &noise(8, 7)).unwrap();
    for (i, t) in items.iter().enumerate() {
        assert_eq!(y0[i], t.reward);
    }
}

#[test]
fn targets_never_exceed_either_critic() {
    let (actor, c1, c2) = nets(8, &[16]);
    let items: Vec<_> = (0..32).map(|i| transition(i, 0.7, false)).collect();
    let b = batch_of(&items);
    let eps = noise(32, 8);
    let (gamma, alpha) = (0.9, 0.2);
    let y = bellman_targets(&actor, &c1, &c2, &b, alpha, gamma, &eps).unwrap();
    let y1 = bellman_targets(&actor, &c1, &c1, &b, alpha, gamma, &eps).unwrap();
    let y2 = bellman_targets(&actor, &c2, &c2, &b, alpha, gamma, &eps).unwrap();
    for i in 0..32 {
        assert!(y[i] <= y1[i] && y[i] <= y2[i]);
        assert!(y[i] == y1[i] || y[i] == y2[i]);
    }
}

/// Q = w·(s, v, ω) + c on one transition: loss (Q − y)², ∂/∂w = 2(Q − y)·x, ∂/∂c = 2(Q − y).
#[test]
fn critic_gradient_by_hand() {
    let mut critic = Network::<f64>::zeros(ArchSpec::mlp("probe", 5, &[], 1)).unwrap();
    let w = [0.5, -1.0, 2.0, 3.0, -0.25];
    let c = 0.1;
    critic.set_params(&[w[0], w[1], w[2], w[3], w[4], c]).unwrap();
    let t = Transition {
        obs: ToyObservation { state: [0.25, -0.5, 0.125] },
        action: Action::new(0.375, 0.75),
        reward: 0.0,
        next_obs: obs(0.0),
        done: true,
    };
    let b = batch_of(&[t]);
    let x = [0.25, -0.5, 0.125, 0.375, 0.75];
    let q: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c;
    assert!((q - 1.9125).abs() < 1e-12);
    let (loss, g) = critic_loss_grad(&critic, &b, &[1.0]).unwrap();
    assert!((loss - 0.9125f64.powi(2)).abs() < 1e-12);
    for k in 0..5 {
        assert!((g[k] - 2.0 * 0.9125 * x[k]).abs() < 1e-12);
    }
    assert!((g[5] - 2.0 * 0.9125).abs() < 1e-12);
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let (mut actor, c1, c2) = nets(9, &[12]);
    let items: Vec<_> = (0..6).map(|i| transition(i, 0.0, false)).collect();
    let b = batch_of(&items);
    let eps = noise(6, 9);
    let alpha = 0.3;
    let step = actor_loss_grad(&actor, &c1, &c2, &b, alpha, &eps).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in (0..actor.param_count()).step_by(7) {
        let base = actor.params()[k];
        actor.params_mut()[k] = base + h;
        let up = actor_loss_grad(&actor, &c1, &c2, &b, alpha, &eps).unwrap().loss;
        actor.params_mut()[k] = base - h;
        let down = actor_loss_grad(&actor, &c1, &c2, &b, alpha, &eps).unwrap().loss;
        actor.params_mut()[k] = base;
        let fd = (up - down) / (2.0 * h);
        let err = (fd - step.grads[k]).abs() / fd.abs().max(step.grads[k].abs()).max(1e-4);
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

fn probe_agent(critic_weights: [f32; 6], alpha: f64) -> SacAgent {
    let cfg = SacConfig {
        batch_size: 16,
        alpha: AlphaMode::Fixed { value: alpha },
        lr: 1e-3,
        ..SacConfig::default()
    };
    let mut rng = substream(10, "probe");
    let actor = Network::init(ArchSpec::mlp("a", 3, &[16], 4), &mut rng).unwrap();
    let mut critic = Network::zeros(ArchSpec::mlp("c", 5, &[], 1)).unwrap();
    critic.set_params(&critic_weights).unwrap();
    SacAgent::from_networks(actor, critic.clone(), critic, cfg)
}

fn actor_steps(agent: &mut SacAgent, batch: &Batch<f32>, n: usize, rng: &mut Rng) -> Vec<PolicyOutput> {
    let mut means = Vec::new();
    for _ in 0..n {
        let eps: Vec<_> = (0..batch.size).map(|_| draw_noise(rng)).collect();
        let alpha = agent.temperature.alpha();
        let s = actor_loss_grad(&agent.actor, &agent.critic1, &agent.critic2, batch, alpha, &eps).unwrap();
        agent.actor_opt.step(agent.actor.params_mut(), &s.grads);
        let raw = agent.actor.forward(&[], &batch.states, batch.size, None).unwrap();
        let outs = policy_outputs(&raw);
        let n = outs.len() as f64;
        let mean = outs.iter().fold([0.0; 4], |acc, o| {
            [
                acc[0] + o.mean[0] / n,
                acc[1] + o.mean[1] / n,
                acc[2] + o.log_std[0] / n,
                acc[3] + o.log_std[1] / n,
            ]
        });
        means.push(PolicyOutput::new([mean[0], mean[1]], [mean[2], mean[3]]));
    }
    means
}

fn fixed_batch(n: usize) -> Batch<f32> {
    let items: Vec<_> = (0..n).map(|i| transition(i, 0.0, false)).collect();
    let refs: Vec<_> = items.iter().collect();
    Batch::from_transitions(&refs)
}

#[test]
fn critic_rewarding_speed_raises_mean_speed() {
    // Q = v.
    let mut agent = probe_agent([0.0, 0.0, 0.0, 1.0, 0.0, 0.0], 0.0);
    let batch = fixed_batch(16);
    let means = actor_steps(&mut agent, &batch, 50, &mut substream(11, "n"));
    for w in means.windows(2) {
        assert!(w[1].mean[0] > w[0].mean[0], "{} !> {}", w[1].mean[0], w[0].mean[0]);
    }
}

#[test]
fn entropy_alone_widens_a_narrow_policy() {
    let mut agent = probe_agent([0.0; 6], 1.0);
    // Start narrow: shift the log σ biases down.
    let n = agent.actor.param_count();
    agent.actor.params_mut()[n - 2] -= 3.0;
    agent.actor.params_mut()[n - 1] -= 3.0;
    let batch = fixed_batch(16);
    let means = actor_steps(&mut agent, &batch, 200, &mut substream(12, "n"));
    let (first, last) = (means[0].log_std, means[199].log_std);
    assert!(last[0] > first[0] + 0.1 && last[1] > first[1] + 0.1, "{first:?} -> {last:?}");
}

#[test]
fn soft_update_limits_and_decay() {
    let mut rng = substream(13, "soft");
    let online = Network::<f64>::init(ArchSpec::mlp("c", 5, &[8], 1), &mut rng).unwrap();
    let start = Network::<f64>::init(ArchSpec::mlp("c", 5, &[8], 1), &mut rng).unwrap();
    let mut t = start.clone();
    soft_update(&mut t, &online, 0.0).unwrap();
    assert_eq!(t.params(), start.params());
    soft_update(&mut t, &online, 1.0).unwrap();
    assert_eq!(t.params(), online.params());

    let dist = |a: &Network<f64>| -> f64 {
        a.params().iter().zip(online.params()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    let mut t = start.clone();
    let tau = 0.005;
    let d0 = dist(&t);
    for _ in 0..100 {
        soft_update(&mut t, &online, tau).unwrap();
    }
    let expected = d0 * (1.0 - tau).powi(100);
    assert!((dist(&t) - expected).abs() < 1e-10 * d0);

    let other = Network::<f64>::init(ArchSpec::mlp("c", 5, &[9], 1), &mut rng).unwrap();
    assert!(soft_update(&mut t, &other, 0.5).is_err());
}

#[test]
fn temperature_moves_towards_target_entropy() {
    let mode = AlphaMode::Auto {
        initial: 0.5,
        target_entropy: -2.0,
    };
    // Entropy −log π = −3 is below the target −2: α must grow.
    let mut t = Temperature::new(mode, 1e-2);
    let a0 = t.alpha();
    t.update(3.0);
    assert!(t.alpha() > a0);
    // Entropy above the target: α shrinks.
    let mut t = Temperature::new(mode, 1e-2);
    t.update(0.0);
    assert!(t.alpha() < a0);
    assert_eq!(Temperature::new(mode, 1e-2).gradient(2.0), 0.0);

    let mut fixed = Temperature::new(AlphaMode::Fixed { value: 0.2 }, 1e-2);
    for lp in [-5.0, 0.0, 5.0] {
        fixed.update(lp);
    }
    assert!((fixed.alpha() - 0.2).abs() < 1e-15);
}

#[test]
fn config_validation() {
    assert!(SacConfig::default().validate().is_ok());
    let bad = [
        SacConfig {
            gamma: 1.0,
            ..SacConfig::default()
        },
        SacConfig {
            batch_size: 0,
            ..SacConfig::default()
        },
        SacConfig {
            replay_capacity: 10,
            ..SacConfig::default()
        },
        SacConfig {
            tau: 0.0,
            ..SacConfig::default()
        },
        SacConfig {
            alpha: AlphaMode::Auto {
                initial: 0.0,
                target_entropy: -2.0,
            },
            ..SacConfig::default()
        },
        SacConfig {
            alpha: AlphaMode::Fixed { value: -1.0 },
            ..SacConfig::default()
        },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
    let toml_round: SacConfig = serde_json::from_str(&serde_json::to_string(&SacConfig::default()).unwrap()).unwrap();
    assert_eq!(toml_round, SacConfig::default());
}

fn short_run(seed: u64, episodes: usize, dir: Option<std::path::PathBuf>) -> TrainOutput {
    let cfg = SacConfig {
        episodes,
        warmup_steps: 100,
        batch_size: 32,
        ..toy_sac_config()
    };
    let agent = toy_agent(cfg, &[16], &mut substream(seed, "init")).unwrap();
    let mut env = ToyCorridor::new(ToyConfig::default()).unwrap();
    let opts = TrainOptions {
        seed,
        out_dir: dir,
        checkpoint_every: 2,
        trace_steps: 100,
    };
    train(&mut env, agent, &opts, &mut |_| {}).unwrap()
}

#[test]
fn training_is_reproducible() {
    let a = short_run(14, 6, None);
    let b = short_run(14, 6, None);
    assert_eq!(a.action_trace.len(), 100);
    assert_eq!(a.action_trace, b.action_trace);
    assert_eq!(a.agent.actor.params(), b.agent.actor.params());
    let c = short_run(15, 6, None);
    assert_ne!(a.action_trace, c.action_trace);
}

#[test]
fn training_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = short_run(16, 5, Some(dir.path().to_path_buf()));
    let log = read_training_log(&dir.path().join("training_log.csv")).unwrap();
    assert_eq!(log.len(), 5);
    assert_eq!(log.len(), out.episodes.len());
    for (i, (row, mem)) in log.iter().zip(&out.episodes).enumerate() {
        assert_eq!(row.episode, i);
        assert_eq!(row.outcome, mem.outcome);
        assert_eq!(row.steps, mem.steps);
        assert!(row.outcome.is_terminal() && row.outcome != Outcome::Running);
        assert_eq!(row.epsilon, ExplorationSchedule::default().epsilon(i));
    }
    for name in ["episode_00002", "episode_00004", "final"] {
        let ck = Checkpoint::load(&dir.path().join(format!("{name}.ckpt"))).unwrap();
        for net in ["actor", "critic1", "critic2", "target1", "target2"] {
            assert!(ck.get(net).is_some(), "{name}/{net}");
        }
    }
    let ck = Checkpoint::load(&dir.path().join("final.ckpt")).unwrap();
    let actor = ck.network("actor", out.agent.actor.arch()).unwrap();
    assert_eq!(actor.params(), out.agent.actor.params());
}

#[test]
fn exploration_fraction_tracks_epsilon() {
    let out = short_run(17, 30, None);
    let (mut explored, mut steps, mut expected, mut var) = (0.0, 0.0, 0.0, 0.0);
    for e in &out.episodes {
        explored += e.explored_fraction * e.steps as f64;
        steps += e.steps as f64;
        expected += e.epsilon * e.steps as f64;
        var += e.epsilon * (1.0 - e.epsilon) * e.steps as f64;
    }
    assert!(steps > 0.0);
    assert!((explored - expected).abs() <= 3.0 * var.sqrt(), "{explored} vs {expected} ± {}", var.sqrt());
}

#[test]
fn divergence_guard_aborts() {
    let cfg = SacConfig {
        episodes: 50,
        warmup_steps: 40,
        batch_size: 16,
        divergence_ceiling: 1e-12,
        divergence_patience: 5,
        ..toy_sac_config()
    };
    let agent = toy_agent(cfg, &[8], &mut substream(18, "init")).unwrap();
    let mut env = ToyCorridor::new(ToyConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        seed: 18,
        out_dir: Some(dir.path().to_path_buf()),
        ..TrainOptions::default()
    };
    match train(&mut env, agent, &opts, &mut |_| {}) {
        Err(Error::Diverged { streak, .. }) => assert_eq!(streak, 5),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.episodes.len())),
    }
    assert!(dir.path().join("diverged.ckpt").exists());
}

#[test]
fn transitions_hold_only_observation_fields() {
    let mut env = ToyCorridor::new(ToyConfig::default()).unwrap();
    let o = env.reset(0, &mut substream(19, "r")).unwrap();
    let r = env.step(Action::new(0.5, 0.0)).unwrap();
    let t = Transition {
        obs: o,
        action: Action::new(0.5, 0.0),
        reward: r.reward,
        next_obs: r.observation,
        done: r.outcome.is_done(),
    };
    // The agent sees [v_prev, ω_prev, y]; the along-track position is logged only.
    assert_eq!(t.next_obs.vector().len(), 3);
    assert!(t.next_obs.image().is_empty());
    assert_eq!(t.next_obs.state[0], 0.5);
}
