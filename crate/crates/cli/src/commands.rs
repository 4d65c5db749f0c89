use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use serde::Serialize;
use serde_json::json;
use toml::Value;
use vinenav::env::{Outcome, VineyardEnv};
use vinenav::eval::{benchmark_inference, write_trajectories, Evaluator};
use vinenav::net::{file_digest, ArchSpec, Checkpoint, Network};
use vinenav::robot::PlatformSpec;
use vinenav::rng::substream;
use vinenav::sac::{self, SacAgent, TrainOptions};
use vinenav::world::{generate_world, VineyardWorld};

use crate::config::{Builder, Provenance, RunConfig, UsageError};
use crate::Common;

fn int(n: impl TryInto<i64>) -> anyhow::Result<Value> {
    n.try_into()
        .map(Value::Integer)
        .map_err(|_| UsageError("integer flag out of range".into()).into())
}

fn path_value(p: &Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

fn strings(v: &[String]) -> Value {
    Value::Array(v.iter().cloned().map(Value::String).collect())
}

/// Layers the file, then `--set`, then the dedicated flags in `flags`.
fn resolve(common: &Common, flags: Vec<(&str, &str, Value)>) -> anyhow::Result<(RunConfig, Provenance)> {
    let mut b = Builder::new()?;
    if let Some(f) = &common.config {
        b.file(f)?;
    }
    for s in &common.set {
        b.assignment(s)?;
    }
    if let Some(seed) = common.seed {
        b.set("seed", int(seed)?, "--seed")?;
    }
    for (key, flag, v) in flags {
        b.set(key, v, flag)?;
    }
    b.resolve()
}

fn out_dir(common: &Common, command: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os("VINENAV_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(command)
    })
}

fn required<'a>(p: &'a Path, what: &str, flag: &str) -> anyhow::Result<&'a Path> {
    if p.as_os_str().is_empty() {
        return Err(UsageError(format!("no {what} given; pass {flag} or set inputs.{what}")).into());
    }
    Ok(p)
}

fn load_world(cfg: &RunConfig) -> anyhow::Result<Arc<VineyardWorld>> {
    let p = required(&cfg.inputs.world, "world", "--world")?;
    Ok(Arc::new(VineyardWorld::load(p)?))
}

fn load_actor(cfg: &RunConfig) -> anyhow::Result<(Network<f32>, String)> {
    let p = required(&cfg.inputs.checkpoint, "checkpoint", "--checkpoint")?;
    let digest = file_digest(p)?;
    let actor = Checkpoint::load(p)?.network("actor", &ArchSpec::actor())?;
    Ok((actor, digest))
}

fn write_outputs(dir: &Path, name: &str, table: &str, report: &impl Serialize) -> anyhow::Result<()> {
    std::fs::write(dir.join(format!("{name}_table.txt")), table)?;
    std::fs::write(dir.join(format!("{name}_report.json")), serde_json::to_string_pretty(report)?)?;
    print!("{table}");
    println!("outputs written to {}", dir.display());
    Ok(())
}

/// The checkpoint is read-only for every evaluation command.
fn ensure_unchanged(cfg: &RunConfig, digest: &str) -> anyhow::Result<()> {
    let now = file_digest(&cfg.inputs.checkpoint)?;
    anyhow::ensure!(now == digest, "checkpoint changed during evaluation");
    Ok(())
}

pub fn world_summary(world: &VineyardWorld) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "world seed {}: {} rows, {} corridors, {} plants",
        world.seed,
        world.rows.len(),
        world.corridor_count(),
        world.plant_count()
    );
    for (i, c) in world.corridors.iter().enumerate() {
        let _ = writeln!(
            s,
            "corridor {:>2}  {:<8}  width {:.3} m  rows {}/{}  block {}",
            i + 1,
            c.shape.label(),
            c.width,
            c.right_row + 1,
            c.left_row + 1,
            c.block + 1
        );
    }
    for (i, r) in world.rows.iter().enumerate() {
        for g in &r.spec.gap_intervals {
            let _ = writeln!(s, "gap row {:>2}  s = [{:.2}, {:.2}] m", i + 1, g[0], g[1]);
        }
    }
    s
}

pub fn gen_world(
    preset: Option<&str>,
    config: Option<&Path>,
    set: &[String],
    seed: Option<u64>,
    output: &Path,
) -> anyhow::Result<()> {
    let mut b = Builder::new()?;
    if let Some(p) = preset {
        b.world_preset(p)?;
    }
    if let Some(f) = config {
        b.file(f)?;
    }
    for s in set {
        b.assignment(s)?;
    }
    if let Some(seed) = seed {
        b.set("world.seed", int(seed)?, "--seed")?;
    }
    let (cfg, prov) = b.resolve()?;
    let world = generate_world(&cfg.world, cfg.world.seed)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    world.save(output)?;
    let stem = output.as_os_str().to_string_lossy();
    std::fs::write(format!("{stem}.config.toml"), cfg.to_toml()?)?;
    std::fs::write(format!("{stem}.provenance.toml"), toml::to_string(&prov)?)?;
    print!("{}", world_summary(&world));
    println!("written to {}", output.display());
    Ok(())
}

pub fn train(
    common: &Common,
    world: Option<PathBuf>,
    episodes: Option<usize>,
    checkpoint_every: Option<usize>,
) -> anyhow::Result<()> {
    let mut flags = Vec::new();
    if let Some(w) = world {
        flags.push(("inputs.world", "--world", path_value(&w)));
    }
    if let Some(n) = episodes {
        flags.push(("sac.episodes", "--episodes", int(n)?));
    }
    if let Some(n) = checkpoint_every {
        flags.push(("train.checkpoint_every", "--checkpoint-every", int(n)?));
    }
    let (cfg, prov) = resolve(common, flags)?;
    let out = out_dir(common, "train");
    let world = load_world(&cfg)?;
    let mut env = VineyardEnv::new(world, cfg.env.clone())?;
    let agent = SacAgent::new(
        ArchSpec::actor(),
        ArchSpec::critic(),
        cfg.sac.clone(),
        &mut substream(cfg.seed, "init"),
    )?;
    cfg.persist(&prov, &out)?;
    let opts = TrainOptions {
        seed: cfg.seed,
        out_dir: Some(out.clone()),
        checkpoint_every: cfg.train.checkpoint_every,
        trace_steps: cfg.train.trace_steps,
    };
    let result = sac::train(&mut env, agent, &opts, &mut |e| {
        eprintln!(
            "episode {:>5}  return {:>9.3}  steps {:>4}  {:<9}  eps {:.3}  critic {:.4}  alpha {:.4}",
            e.episode,
            e.episode_return,
            e.steps,
            e.outcome.as_str(),
            e.epsilon,
            e.critic_loss,
            e.alpha
        );
    })?;
    let tail = &result.episodes[result.episodes.len().saturating_sub(50)..];
    let successes = tail.iter().filter(|e| e.outcome == Outcome::Success).count();
    let summary = json!({
        "seed": cfg.seed,
        "episodes": result.episodes.len(),
        "total_steps": result.episodes.last().map_or(0, |e| e.total_steps),
        "final_window": tail.len(),
        "final_window_successes": successes,
        "final_checkpoint_digest": file_digest(&out.join("final.ckpt"))?,
    });
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!(
        "trained {} episodes; {}/{} successes in the last window; outputs in {}",
        result.episodes.len(),
        successes,
        tail.len(),
        out.display()
    );
    Ok(())
}

fn eval_flags(
    world: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
) -> Vec<(&'static str, &'static str, Value)> {
    let mut flags = Vec::new();
    if let Some(w) = world {
        flags.push(("inputs.world", "--world", path_value(&w)));
    }
    if let Some(c) = checkpoint {
        flags.push(("inputs.checkpoint", "--checkpoint", path_value(&c)));
    }
    flags
}

pub fn eval(
    common: &Common,
    workers: usize,
    world: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    runs_per_row: Option<usize>,
) -> anyhow::Result<()> {
    let mut flags = eval_flags(world, checkpoint);
    if let Some(n) = runs_per_row {
        flags.push(("eval.runs_per_row", "--runs-per-row", int(n)?));
    }
    let (cfg, prov) = resolve(common, flags)?;
    let out = out_dir(common, "eval");
    let world = load_world(&cfg)?;
    let (actor, digest) = load_actor(&cfg)?;
    let ev = Evaluator::new(&actor, world, cfg.env.clone(), cfg.eval.clone(), cfg.seed, workers)?;
    let report = ev.evaluate_suite()?;
    ensure_unchanged(&cfg, &digest)?;
    cfg.persist(&prov, &out)?;
    report.write_trajectories(&out.join("trajectories"))?;
    let body = json!({ "seed": cfg.seed, "checkpoint_digest": digest, "report": report });
    write_outputs(&out, "eval", &report.to_table(), &body)
}

fn shapes(cfg: &RunConfig) -> Vec<&str> {
    cfg.eval.sweep_shapes.iter().map(String::as_str).collect()
}

fn sweep_flags(
    flags: &mut Vec<(&'static str, &'static str, Value)>,
    runs: Option<usize>,
    rows: Option<Vec<String>>,
) -> anyhow::Result<()> {
    if let Some(n) = runs {
        flags.push(("eval.sweep_runs", "--runs", int(n)?));
    }
    if let Some(r) = rows {
        flags.push(("eval.sweep_shapes", "--rows", strings(&r)));
    }
    Ok(())
}

pub fn sweep_noise(
    common: &Common,
    workers: usize,
    world: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    factors: Option<Vec<f64>>,
    runs: Option<usize>,
    rows: Option<Vec<String>>,
) -> anyhow::Result<()> {
    let mut flags = eval_flags(world, checkpoint);
    if let Some(f) = factors {
        flags.push((
            "eval.noise_factors",
            "--factors",
            Value::Array(f.into_iter().map(Value::Float).collect()),
        ));
    }
    sweep_flags(&mut flags, runs, rows)?;
    let (cfg, prov) = resolve(common, flags)?;
    let out = out_dir(common, "sweep-noise");
    let world = load_world(&cfg)?;
    let (actor, digest) = load_actor(&cfg)?;
    let ev = Evaluator::new(&actor, world, cfg.env.clone(), cfg.eval.clone(), cfg.seed, workers)?;
    let corridors = ev.corridors_by_shape(&shapes(&cfg))?;
    let report = ev.noise_sweep(&corridors)?;
    ensure_unchanged(&cfg, &digest)?;
    cfg.persist(&prov, &out)?;
    for row in &report.rows {
        write_trajectories(&out.join("trajectories"), &format!("factor{}_", row.factor), &row.runs)?;
    }
    let body = json!({ "seed": cfg.seed, "checkpoint_digest": digest, "report": report });
    write_outputs(&out, "sweep", &report.to_table(), &body)
}

pub fn swap_platform(
    common: &Common,
    workers: usize,
    world: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    platforms: Option<Vec<String>>,
    runs: Option<usize>,
    rows: Option<Vec<String>>,
) -> anyhow::Result<()> {
    let mut flags = eval_flags(world, checkpoint);
    if let Some(p) = platforms {
        flags.push(("eval.platforms", "--platforms", strings(&p)));
    }
    sweep_flags(&mut flags, runs, rows)?;
    let (cfg, prov) = resolve(common, flags)?;
    let out = out_dir(common, "swap-platform");
    let world = load_world(&cfg)?;
    let (actor, digest) = load_actor(&cfg)?;
    let ev = Evaluator::new(&actor, world, cfg.env.clone(), cfg.eval.clone(), cfg.seed, workers)?;
    let corridors = ev.corridors_by_shape(&shapes(&cfg))?;
    let specs: Vec<PlatformSpec> = cfg
        .eval
        .platforms
        .iter()
        .map(|n| PlatformSpec::by_name(n).ok_or_else(|| UsageError(format!("unknown platform `{n}`"))))
        .collect::<Result<_, _>>()?;
    let report = ev.platform_swap(&specs, &corridors)?;
    ensure_unchanged(&cfg, &digest)?;
    cfg.persist(&prov, &out)?;
    for row in &report.rows {
        write_trajectories(&out.join("trajectories"), &format!("{}_", row.platform.name), &row.runs)?;
    }
    let body = json!({ "seed": cfg.seed, "checkpoint_digest": digest, "report": report });
    write_outputs(&out, "platform", &report.to_table(), &body)
}

pub fn bench(
    common: &Common,
    checkpoint: Option<PathBuf>,
    trials: Option<usize>,
    warmup: Option<usize>,
) -> anyhow::Result<()> {
    let mut flags = eval_flags(None, checkpoint);
    if let Some(n) = trials {
        flags.push(("eval.bench_trials", "--trials", int(n)?));
    }
    if let Some(n) = warmup {
        flags.push(("eval.bench_warmup", "--warmup", int(n)?));
    }
    let (cfg, prov) = resolve(common, flags)?;
    let out = out_dir(common, "bench");
    let (actor, digest) = if cfg.inputs.checkpoint.as_os_str().is_empty() {
        let net = Network::init(ArchSpec::actor(), &mut substream(cfg.seed, "bench-init"))?;
        (net, String::new())
    } else {
        load_actor(&cfg)?
    };
    let stats = benchmark_inference(&actor, cfg.eval.bench_trials, cfg.eval.bench_warmup, cfg.seed)?;
    cfg.persist(&prov, &out)?;
    let body = json!({ "seed": cfg.seed, "checkpoint_digest": digest, "latency": stats });
    write_outputs(&out, "bench", &stats.to_table(), &body)
}
