use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vinenav::net::{ArchSpec, Checkpoint, Network};
use vinenav::rng::substream;
use vinenav::world::VineyardWorld;

fn vinenav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vinenav"))
        .args(args)
        .env_remove("VINENAV_OUT")
        .env_remove("VINENAV_WORKERS")
        .output()
        .expect("spawn vinenav")
}

fn ok(args: &[&str]) -> String {
    let out = vinenav(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    vinenav(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn test_world(dir: &Path) -> PathBuf {
    let p = dir.join("test.world");
    ok(&["gen-world", "--preset", "test", "--seed", "11", "-o", s(&p)]);
    p
}

const TINY: [&str; 6] = [
    "--set",
    "env.episode.max_steps=4",
    "--set",
    "sac.warmup_steps=4",
    "--set",
    "sac.batch_size=2",
];

fn tiny_checkpoint(dir: &Path, world: &Path) -> PathBuf {
    let out = dir.join("train");
    let mut args = vec!["train", "--world", s(world), "--episodes", "1", "--seed", "5", "--out", s(&out)];
    args.extend(TINY);
    ok(&args);
    out.join("final.ckpt")
}

#[test]
fn gen_world_summary_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("train.world");
    let text = ok(&["gen-world", "--preset", "train", "--seed", "7", "-o", s(&p)]);
    assert!(text.contains("corridors") && text.contains("width"));
    let bytes = std::fs::read(&p).unwrap();
    let world = VineyardWorld::load(&p).unwrap();
    assert_eq!(world.seed, 7);
    assert_eq!(world.to_json().unwrap().as_bytes(), &bytes[..]);

    let t = test_world(dir.path());
    let test = VineyardWorld::load(&t).unwrap();
    assert_eq!(test.corridor_count(), 5);
    let text = ok(&["gen-world", "--preset", "test", "--seed", "11", "-o", s(&dir.path().join("again.world"))]);
    for label in ["Straight", "Curved", "Hybrid"] {
        assert!(text.contains(label), "{label}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "").unwrap();
    let o = dir.path().join("w");
    assert_eq!(code(&["gen-world", "--preset", "train", "--config", s(&cfg), "-o", s(&o)]), 2);
    assert_eq!(code(&["gen-world", "--preset", "moon", "-o", s(&o)]), 2);
    assert_eq!(code(&["gen-world", "--set", "world.rows=3", "-o", s(&o)]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["eval", "--out", s(&o)]), 2);
    // Invalid values are configuration errors.
    assert_eq!(code(&["gen-world", "--set", "world.jitter=-1.0", "-o", s(&o)]), 2);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn mismatched_checkpoint_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let world = test_world(dir.path());
    let toy = Network::<f32>::init(ArchSpec::mlp("toy_actor", 3, &[8], 4), &mut substream(0, "t")).unwrap();
    let ck = dir.path().join("toy.ckpt");
    Checkpoint::new(serde_json::json!({})).with("actor", &toy).save(&ck).unwrap();
    let out = dir.path().join("out");
    for cmd in ["eval", "sweep-noise", "swap-platform"] {
        assert_eq!(code(&[cmd, "--world", s(&world), "--checkpoint", s(&ck), "--out", s(&out)]), 4, "{cmd}");
    }
    assert_eq!(code(&["bench", "--checkpoint", s(&ck), "--out", s(&out)]), 4);
    std::fs::write(&ck, b"not a checkpoint").unwrap();
    assert_eq!(code(&["eval", "--world", s(&world), "--checkpoint", s(&ck), "--out", s(&out)]), 4);
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let world = test_world(dir.path());
    let out = dir.path().join("train");
    let mut args = vec!["train", "--world", s(&world), "--episodes", "3", "--out", s(&out)];
    args.extend(TINY);
    args.extend(["--set", "sac.divergence_ceiling=1e-12", "--set", "sac.divergence_patience=2"]);
    assert_eq!(code(&args), 3);
    assert!(out.join("diverged.ckpt").exists());
    assert!(out.join("resolved_config.toml").exists());
}

#[test]
fn train_writes_log_checkpoints_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let world = test_world(dir.path());
    let out = dir.path().join("train");
    let mut args = vec![
        "train",
        "--world",
        s(&world),
        "--episodes",
        "3",
        "--seed",
        "1",
        "--checkpoint-every",
        "2",
        "--out",
        s(&out),
    ];
    args.extend(TINY);
    ok(&args);
    let log = vinenav::sac::read_training_log(&out.join("training_log.csv")).unwrap();
    assert_eq!(log.len(), 3);
    for f in ["final.ckpt", "episode_00002.ckpt", "summary.json", "resolved_config.toml", "provenance.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let snap = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(snap.contains("seed = 1"));
    let prov = std::fs::read_to_string(out.join("provenance.toml")).unwrap();
    assert!(prov.contains("\"sac.episodes\" = \"flag:--episodes\""));
    assert!(prov.contains("\"sac.gamma\" = \"default\""));

    // Same seed: identical log.
    let again = dir.path().join("again");
    ok(&["train", "--config", s(&out.join("resolved_config.toml")), "--out", s(&again)]);
    assert_eq!(
        std::fs::read(out.join("training_log.csv")).unwrap(),
        std::fs::read(again.join("training_log.csv")).unwrap()
    );
}

#[test]
fn eval_commands_write_tables_reports_and_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let world = test_world(dir.path());
    let ck = tiny_checkpoint(dir.path(), &world);
    let digest = vinenav::net::file_digest(&ck).unwrap();
    let base = ["--world", s(&world), "--checkpoint", s(&ck), "--set", "env.episode.max_steps=3"];

    let out = dir.path().join("eval");
    let mut args = vec!["eval", "--runs-per-row", "1", "--out", s(&out)];
    args.extend(base);
    let table = ok(&args);
    assert!(table.contains("Overall"));
    assert!(out.join("eval_table.txt").exists() && out.join("resolved_config.toml").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["checkpoint_digest"], digest.as_str());
    // Rows without runs are omitted.
    assert_eq!(report["report"]["rows"].as_array().unwrap().len(), 5);
    // One forward run per corridor; reverse gets none.
    let trajectories = std::fs::read_dir(out.join("trajectories")).unwrap().count();
    assert_eq!(trajectories, 5);

    let out = dir.path().join("sweep");
    let mut args = vec!["sweep-noise", "--factors", "0,10", "--runs", "1", "--out", s(&out)];
    args.extend(base);
    assert!(ok(&args).contains("Factor"));
    assert!(out.join("trajectories/factor10_row1_F_run00.csv").exists());

    let out = dir.path().join("swap");
    let mut args = vec!["swap-platform", "--platforms", "husky", "--runs", "1", "--rows", "curved", "--out", s(&out)];
    args.extend(base);
    let table = ok(&args);
    assert!(table.contains("husky") && !table.contains("jackal"));
    assert!(out.join("trajectories/husky_row4_F_run00.csv").exists());

    let out = dir.path().join("bench");
    let table = ok(&["bench", "--checkpoint", s(&ck), "--trials", "3", "--out", s(&out)]);
    assert!(table.contains('±'));
    assert_eq!(vinenav::net::file_digest(&ck).unwrap(), digest);
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_vinenav"))
        .args(["bench", "--trials", "2"])
        .env("VINENAV_OUT", dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(dir.path().join("bench/bench_report.json").exists());
    assert!(dir.path().join("bench/resolved_config.toml").exists());
}
