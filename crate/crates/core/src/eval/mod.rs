//! Trained-policy evaluation: ground-truth fitting, cross-track metrics, the per-row
//! test suite, noise sweeps, platform swaps and inference latency.

mod groundtruth;

pub use groundtruth::{
    cross_track_errors, error_sums, eval_polynomial, fit_polynomial, ErrorSums, GroundTruthLine, CACHE_RESOLUTION,
    DEGREE,
};

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng as _, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{
    write_episode_csv, Action, EnvConfig, Environment, EpisodeRecord, Outcome, StartPose, VineyardEnv,
};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::net::policy::{deterministic_action, sample_action};
use crate::net::{ArchSpec, Network, PolicyOutput};
use crate::rng::{indexed_stream, substream, Rng};
use crate::robot::PlatformSpec;
use crate::sensor::MAX_RANGE;
use crate::world::{Direction, VineyardWorld, EXIT_MARGIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Runs per corridor, split between forward (rounded up) and reverse.
    pub runs_per_row: usize,
    /// Half-widths of the uniform start jitter around the corridor entry.
    pub start_lateral: f64,
    pub start_yaw_deg: f64,
    pub median_samples: usize,
    /// Ground-truth extension past both row ends.
    pub gt_extend: f64,
    pub deterministic: bool,
    pub noise_factors: Vec<f64>,
    pub sweep_runs: usize,
    /// Row shapes used by the noise sweep and the platform swap.
    pub sweep_shapes: Vec<String>,
    pub platforms: Vec<String>,
    pub bench_trials: usize,
    pub bench_warmup: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            runs_per_row: 10,
            start_lateral: 0.05,
            start_yaw_deg: 3.0,
            median_samples: 400,
            gt_extend: EXIT_MARGIN,
            deterministic: true,
            noise_factors: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            sweep_runs: 10,
            sweep_shapes: vec!["straight".into(), "curved".into()],
            platforms: vec!["jackal".into(), "husky".into()],
            bench_trials: 100,
            bench_warmup: 10,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs_per_row == 0 || self.sweep_runs == 0 || self.bench_trials == 0 {
            return Err(Error::Config("run and trial counts must be >= 1".into()));
        }
        if self.median_samples < DEGREE + 1 {
            return Err(Error::Config(format!("median_samples must be >= {}", DEGREE + 1)));
        }
        if self.noise_factors.is_empty() || self.noise_factors.iter().any(|f| !(*f >= 0.0)) {
            return Err(Error::Config("noise factors must be a nonempty list of values >= 0".into()));
        }
        if self.sweep_shapes.is_empty() {
            return Err(Error::Config("at least one sweep shape is required".into()));
        }
        if self.platforms.is_empty() {
            return Err(Error::Config("at least one platform is required".into()));
        }
        for p in &self.platforms {
            PlatformSpec::by_name(p).ok_or_else(|| Error::Config(format!("unknown platform {p}")))?;
        }
        if !(self.start_lateral >= 0.0 && self.start_yaw_deg >= 0.0 && self.gt_extend >= 0.0) {
            return Err(Error::Config("start jitter and gt_extend must be >= 0".into()));
        }
        Ok(())
    }
}

/// Rejects actors whose architecture differs from the vision actor.
pub fn check_actor(actor: &Network<f32>) -> Result<()> {
    let want = ArchSpec::actor();
    if actor.arch() != &want {
        return Err(Error::ArchMismatch {
            expected: want.hash(),
            found: actor.arch().hash(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub start: StartPose,
    /// Initial state followed by one record per step.
    pub records: Vec<EpisodeRecord>,
    pub outcome: Outcome,
}

impl EpisodeLog {
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn trajectory(&self) -> Vec<Point2> {
        self.records.iter().map(|r| Point2::new(r.x, r.y)).collect()
    }
}

/// Roll out one episode from `start`; `rng` seeds the environment and, when
/// stochastic, the action samples.
pub fn run_episode(
    actor: &Network<f32>,
    env: &mut VineyardEnv,
    start: StartPose,
    mut rng: Rng,
    deterministic: bool,
) -> Result<EpisodeLog> {
    check_actor(actor)?;
    let env_rng = Rng::seed_from_u64(rng.random());
    let mut obs = env.reset_to(start, env_rng)?;
    let initial = env.initial_info().ok_or_else(|| Error::Config("environment has no initial state".into()))?;
    let mut records = vec![EpisodeRecord::initial(&initial)];
    loop {
        let raw = actor.forward_one(obs.depth.data(), &obs.state)?;
        let out = PolicyOutput::from_raw(&[f64::from(raw[0]), f64::from(raw[1]), f64::from(raw[2]), f64::from(raw[3])]);
        let action: Action = if deterministic {
            deterministic_action(&out)
        } else {
            sample_action(&out, &mut rng).0
        };
        let res = env.step(action)?;
        records.push(EpisodeRecord::from_step(action, res.reward, res.outcome, &res.info));
        obs = res.observation;
        if res.outcome.is_terminal() {
            return Ok(EpisodeLog {
                start,
                records,
                outcome: res.outcome,
            });
        }
    }
}

/// Pooled first and second moments of the commanded actions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionMoments {
    pub n: usize,
    pub v: f64,
    pub v2: f64,
    pub omega: f64,
    pub omega2: f64,
}

impl ActionMoments {
    pub fn add(&mut self, v: f64, omega: f64) {
        self.n += 1;
        self.v += v;
        self.v2 += v * v;
        self.omega += omega;
        self.omega2 += omega * omega;
    }

    pub fn merge(&mut self, o: &ActionMoments) {
        self.n += o.n;
        self.v += o.v;
        self.v2 += o.v2;
        self.omega += o.omega;
        self.omega2 += o.omega2;
    }

    fn mean_std(sum: f64, sum2: f64, n: usize) -> (f64, f64) {
        if n == 0 {
            return (f64::NAN, f64::NAN);
        }
        let m = sum / n as f64;
        (m, (sum2 / n as f64 - m * m).max(0.0).sqrt())
    }

    pub fn v_stats(&self) -> (f64, f64) {
        Self::mean_std(self.v, self.v2, self.n)
    }

    pub fn omega_stats(&self) -> (f64, f64) {
        Self::mean_std(self.omega, self.omega2, self.n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub corridor: usize,
    pub direction: Direction,
    pub run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub corridor: usize,
    pub direction: Direction,
    pub run: usize,
    pub outcome: Outcome,
    pub steps: usize,
    pub time_s: f64,
    pub errors: ErrorSums,
    pub actions: ActionMoments,
    #[serde(skip)]
    pub records: Vec<EpisodeRecord>,
}

impl RunResult {
    pub fn success(&self) -> bool {
        self.outcome == Outcome::Success
    }
}

/// `runs` runs per corridor, forward first, ordered by (corridor, direction, run).
pub fn run_specs(corridors: &[usize], runs: usize) -> Vec<RunSpec> {
    let forward = runs.div_ceil(2);
    let mut out = Vec::new();
    for &corridor in corridors {
        for (direction, n) in [(Direction::Forward, forward), (Direction::Reverse, runs - forward)] {
            out.extend((0..n).map(|run| RunSpec {
                corridor,
                direction,
                run,
            }));
        }
    }
    out
}

/// Fixed ground-truth lines per corridor of a world.
pub fn ground_truth(world: &VineyardWorld, cfg: &EvalConfig) -> Result<Vec<GroundTruthLine>> {
    (0..world.corridor_count())
        .map(|c| GroundTruthLine::fit(&world.median_points(c, cfg.median_samples)?, cfg.gt_extend))
        .collect()
}

/// Shared inputs of every evaluation protocol.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    pub actor: &'a Network<f32>,
    pub world: Arc<VineyardWorld>,
    pub env: EnvConfig,
    pub cfg: EvalConfig,
    pub seed: u64,
    /// Worker threads; 0 uses available parallelism.
    pub workers: usize,
    gts: Vec<GroundTruthLine>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        actor: &'a Network<f32>,
        world: Arc<VineyardWorld>,
        env: EnvConfig,
        cfg: EvalConfig,
        seed: u64,
        workers: usize,
    ) -> Result<Self> {
        check_actor(actor)?;
        cfg.validate()?;
        env.validate()?;
        let gts = ground_truth(&world, &cfg)?;
        Ok(Self {
            actor,
            world,
            env,
            cfg,
            seed,
            workers,
            gts,
        })
    }

    pub fn ground_truth(&self) -> &[GroundTruthLine] {
        &self.gts
    }

    fn start(&self, spec: &RunSpec, rng: &mut Rng) -> StartPose {
        let u = |rng: &mut Rng| 2.0 * rng.random::<f64>() - 1.0;
        StartPose {
            corridor: spec.corridor,
            direction: spec.direction,
            arclength: 0.0,
            lateral: self.cfg.start_lateral * u(rng),
            yaw_offset: self.cfg.start_yaw_deg.to_radians() * u(rng),
        }
    }

    /// Runs are independent: each draws from a stream keyed by (corridor, direction,
    /// run), so results do not depend on the worker count or on `env_cfg` beyond its
    /// physical effect.
    pub fn run_all(&self, specs: &[RunSpec], env_cfg: &EnvConfig) -> Result<Vec<RunResult>> {
        for s in specs {
            if s.corridor >= self.world.corridor_count() {
                return Err(Error::Config(format!("corridor {} out of range", s.corridor)));
            }
        }
        let template = VineyardEnv::new(self.world.clone(), env_cfg.clone())?;
        let one = |spec: &RunSpec| -> Result<RunResult> {
            let mut env = template.clone();
            let d = u64::from(spec.direction == Direction::Reverse);
            let mut rng = indexed_stream(self.seed, "eval", &[spec.corridor as u64, d, spec.run as u64]);
            let start = self.start(spec, &mut rng);
            let log = run_episode(self.actor, &mut env, start, rng, self.cfg.deterministic)?;
            let mut actions = ActionMoments::default();
            for r in &log.records[1..] {
                actions.add(r.v, r.omega);
            }
            Ok(RunResult {
                corridor: spec.corridor,
                direction: spec.direction,
                run: spec.run,
                outcome: log.outcome,
                steps: log.steps(),
                time_s: log.steps() as f64 * env_cfg.episode.dt,
                errors: error_sums(&log.trajectory(), &self.gts[spec.corridor]),
                actions,
                records: log.records,
            })
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| specs.par_iter().map(one).collect())
    }

    /// Per-corridor, per-direction rows plus an overall row.
    pub fn evaluate_suite(&self) -> Result<EvalReport> {
        let corridors: Vec<usize> = (0..self.world.corridor_count()).collect();
        let specs = run_specs(&corridors, self.cfg.runs_per_row);
        let runs = self.run_all(&specs, &self.env)?;
        let mut rows = Vec::new();
        for &c in &corridors {
            for d in [Direction::Forward, Direction::Reverse] {
                let sel: Vec<&RunResult> = runs.iter().filter(|r| r.corridor == c && r.direction == d).collect();
                if sel.is_empty() {
                    continue;
                }
                let shape = self.world.corridors[c].shape.label().to_string();
                rows.push(EvalRow::aggregate(format!("{}", c + 1), shape, Some(d), &sel));
            }
        }
        let all: Vec<&RunResult> = runs.iter().collect();
        let overall = EvalRow::aggregate("Overall".into(), "-".into(), None, &all);
        Ok(EvalReport { rows, overall, runs })
    }

    /// First corridor of each requested shape label.
    pub fn corridors_by_shape(&self, shapes: &[&str]) -> Result<Vec<usize>> {
        shapes
            .iter()
            .map(|s| {
                self.world
                    .corridors
                    .iter()
                    .position(|c| c.shape.label().eq_ignore_ascii_case(s))
                    .ok_or_else(|| Error::Config(format!("world has no {s} corridor")))
            })
            .collect()
    }

    /// Same runs repeated at each noise factor.
    pub fn noise_sweep(&self, corridors: &[usize]) -> Result<SweepReport> {
        let specs = run_specs(corridors, self.cfg.sweep_runs);
        let mut rows = Vec::new();
        for &factor in &self.cfg.noise_factors {
            let mut env = self.env.clone();
            env.noise.factor = factor;
            let runs = self.run_all(&specs, &env)?;
            let refs: Vec<&RunResult> = runs.iter().collect();
            rows.push(SweepRow {
                factor,
                summary: EvalRow::aggregate(format!("{factor}"), "-".into(), None, &refs),
                runs,
            });
        }
        Ok(SweepReport {
            corridors: corridors.to_vec(),
            rows,
        })
    }

    /// The same policy under each platform's footprint and camera mount.
    pub fn platform_swap(&self, platforms: &[PlatformSpec], corridors: &[usize]) -> Result<PlatformReport> {
        let specs = run_specs(corridors, self.cfg.sweep_runs);
        let mut rows = Vec::new();
        for p in platforms {
            p.validate()?;
            let mut env = self.env.clone();
            env.platform = p.clone();
            let runs = self.run_all(&specs, &env)?;
            let refs: Vec<&RunResult> = runs.iter().collect();
            rows.push(PlatformRow {
                summary: EvalRow::aggregate(p.name.clone(), "-".into(), None, &refs),
                platform: p.clone(),
                runs,
            });
        }
        Ok(PlatformReport {
            corridors: corridors.to_vec(),
            rows,
        })
    }
}

fn fmt_or_dash(x: f64, prec: usize) -> String {
    if x.is_finite() {
        format!("{x:.prec$}")
    } else {
        "-".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub shape: String,
    pub direction: Option<Direction>,
    pub runs: usize,
    pub successes: usize,
    /// Pooled over every point of every run.
    pub mae: f64,
    pub rmse: f64,
    /// Pooled over successful runs only.
    pub success_mae: f64,
    pub success_rmse: f64,
    pub v_mean: f64,
    pub v_std: f64,
    pub omega_mean: f64,
    pub omega_std: f64,
    /// Mean traversal time of successful runs.
    pub t_avg: f64,
    pub errors: ErrorSums,
    pub success_errors: ErrorSums,
    pub actions: ActionMoments,
}

impl EvalRow {
    pub fn aggregate(label: String, shape: String, direction: Option<Direction>, runs: &[&RunResult]) -> Self {
        let mut errors = ErrorSums::default();
        let mut success_errors = ErrorSums::default();
        let mut actions = ActionMoments::default();
        let (mut successes, mut time) = (0, 0.0);
        for r in runs {
            errors.merge(&r.errors);
            actions.merge(&r.actions);
            if r.success() {
                successes += 1;
                time += r.time_s;
                success_errors.merge(&r.errors);
            }
        }
        let (v_mean, v_std) = actions.v_stats();
        let (omega_mean, omega_std) = actions.omega_stats();
        Self {
            label,
            shape,
            direction,
            runs: runs.len(),
            successes,
            mae: errors.mae(),
            rmse: errors.rmse(),
            success_mae: success_errors.mae(),
            success_rmse: success_errors.rmse(),
            v_mean,
            v_std,
            omega_mean,
            omega_std,
            t_avg: if successes > 0 { time / successes as f64 } else { f64::NAN },
            errors,
            success_errors,
            actions,
        }
    }

    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.runs.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub overall: EvalRow,
    pub runs: Vec<RunResult>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:<9} {:>3} {:>8} {:>8} {:>15} {:>15} {:>8}",
            "Row", "Shape", "Dir", "MAE[m]", "RMSE[m]", "v[m/s]", "w[rad/s]", "Success"
        );
        for r in self.rows.iter().chain(std::iter::once(&self.overall)) {
            let dir = r.direction.map_or("-".to_string(), |d| d.letter().to_string());
            let _ = writeln!(
                s,
                "{:<8} {:<9} {:>3} {:>8} {:>8} {:>15} {:>15} {:>8}",
                r.label,
                r.shape,
                dir,
                fmt_or_dash(r.mae, 3),
                fmt_or_dash(r.rmse, 3),
                format!("{} ± {}", fmt_or_dash(r.v_mean, 2), fmt_or_dash(r.v_std, 2)),
                format!("{} ± {}", fmt_or_dash(r.omega_mean, 2), fmt_or_dash(r.omega_std, 2)),
                format!("{}/{}", r.successes, r.runs),
            );
        }
        s
    }

    pub fn write_trajectories(&self, dir: &Path) -> Result<()> {
        write_trajectories(dir, "", &self.runs)
    }
}

pub fn write_trajectories(dir: &Path, prefix: &str, runs: &[RunResult]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in runs {
        let name = format!(
            "{prefix}row{}_{}_run{:02}.csv",
            r.corridor + 1,
            r.direction.letter(),
            r.run
        );
        write_episode_csv(&dir.join(name), &r.records)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub factor: f64,
    pub summary: EvalRow,
    pub runs: Vec<RunResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub corridors: Vec<usize>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>7} {:>8} {:>15} {:>15}", "Factor", "Success", "v[m/s]", "w[rad/s]");
        for r in &self.rows {
            let m = &r.summary;
            let _ = writeln!(
                s,
                "{:>7} {:>8} {:>15} {:>15}",
                r.factor,
                format!("{}/{}", m.successes, m.runs),
                format!("{} ± {}", fmt_or_dash(m.v_mean, 2), fmt_or_dash(m.v_std, 2)),
                format!("{} ± {}", fmt_or_dash(m.omega_mean, 2), fmt_or_dash(m.omega_std, 2)),
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformRow {
    pub platform: PlatformSpec,
    pub summary: EvalRow,
    pub runs: Vec<RunResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformReport {
    pub corridors: Vec<usize>,
    pub rows: Vec<PlatformRow>,
}

impl PlatformReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>9} {:>8} {:>8}",
            "Platform", "Success", "T_avg[s]", "MAE[m]", "RMSE[m]"
        );
        for r in self.rows.iter().map(|r| &r.summary) {
            let _ = writeln!(
                s,
                "{:<10} {:>8} {:>9} {:>8} {:>8}",
                r.label,
                format!("{}/{}", r.successes, r.runs),
                fmt_or_dash(r.t_avg, 1),
                fmt_or_dash(r.mae, 3),
                fmt_or_dash(r.rmse, 3),
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub trials: usize,
    pub mean_ms: f64,
    /// Sample standard deviation; zero for a single trial.
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(ms: &[f64]) -> Self {
        let n = ms.len();
        let mean = ms.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            trials: n,
            mean_ms: mean,
            std_ms: var.sqrt(),
            min_ms: ms.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: ms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn to_table(&self) -> String {
        format!(
            "{:<24} {:>18}\n{:<24} {:>18}\n",
            "Network",
            "Inference [ms]",
            "actor (CPU, 1 thread)",
            format!("{:.2} ± {:.2}", self.mean_ms, self.std_ms)
        )
    }
}

/// Wall time of single actor forward passes on fresh random inputs, after `warmup`
/// untimed calls; runs on the calling thread.
pub fn benchmark_inference(actor: &Network<f32>, trials: usize, warmup: usize, seed: u64) -> Result<LatencyStats> {
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    let mut rng = substream(seed, "bench");
    let len = actor.image_len();
    let extra = actor.extra_dim();
    let draw = |rng: &mut Rng| -> (Vec<f32>, Vec<f32>) {
        let img = (0..len).map(|_| rng.random_range(0.0..MAX_RANGE as f32)).collect();
        let st = (0..extra).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        (img, st)
    };
    for _ in 0..warmup {
        let (img, st) = draw(&mut rng);
        std::hint::black_box(actor.forward_one(&img, &st)?);
    }
    let mut ms = Vec::with_capacity(trials);
    for _ in 0..trials {
        let (img, st) = draw(&mut rng);
        let t0 = Instant::now();
        let out = actor.forward_one(&img, &st)?;
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    Ok(LatencyStats::from_samples(&ms))
}
