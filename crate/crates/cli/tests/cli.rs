use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use bwr_cli::*;
use bwr_core::checkpoint::Checkpoint;
use bwr_core::config::{RunConfig, Task};
use bwr_core::gait::{self, Format};
use bwr_core::nn::Parametric;

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.conf");
    fs::write(&p, text).unwrap();
    p
}

/// Small point-mass run: learning starts at episode 3 so resumes cross
/// warmup, buffer wraparound and target updates.
const POINT_MASS_SMALL: &str = "
[env]
task = point_mass
seed = 11
[ddpg]
batch_size = 16
buffer_capacity = 100
warmup = 50
batch_norm = true
[run]
checkpoint_interval = 4
curve_window = 5
";

fn train(config: &Path, out: &Path, episodes: u64, checkpoint: Option<PathBuf>) -> TrainSummary {
    cmd_train(&TrainArgs {
        config: Some(config.to_path_buf()),
        checkpoint,
        out: Some(out.to_path_buf()),
        episodes: Some(episodes),
        quiet: true,
        ..TrainArgs::default()
    })
    .unwrap()
}

#[test]
fn shipped_configs_match_the_builtin_presets() {
    assert_eq!(RunConfig::load(&repo_file("configs/point_mass.conf")).unwrap(), RunConfig::point_mass_preset());
    let mut biped = RunConfig::load(&repo_file("configs/biped.conf")).unwrap();
    biped.run.out_dir = RunConfig::default().run.out_dir;
    assert_eq!(biped, RunConfig::default());
}

#[test]
fn two_episode_run_writes_rows_and_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[run]\ncheckpoint_interval = 1\n");
    let out = dir.path().join("out");
    let summary = train(&cfg, &out, 2, None);
    assert_eq!(summary.metrics.len(), 2);

    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("2,"));
    assert_eq!(fs::read_to_string(out.join("timing.csv")).unwrap().lines().count(), 3);
    assert!(out.join("checkpoints").join(checkpoint_name(1)).exists());
    assert!(out.join("checkpoints").join(checkpoint_name(2)).exists());
    assert!(out.join("checkpoint.bwrd").exists());
    assert!(out.join("reward_curve.svg").exists());

    let echo = fs::read_to_string(out.join("config.txt")).unwrap();
    let reparsed = RunConfig::parse(&echo).unwrap();
    assert_eq!(reparsed.env.seed, summary.config.env.seed);
    assert_eq!(reparsed.fingerprint(), summary.config.fingerprint());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), POINT_MASS_SMALL);
    let full = dir.path().join("full");
    let split = dir.path().join("split");
    train(&cfg, &full, 12, None);
    train(&cfg, &split, 8, None);
    // Drop the rows after the checkpoint to prove the resume regenerates them.
    let resumed = train(&cfg, &split, 12, Some(split.join("checkpoints").join(checkpoint_name(4))));
    assert_eq!(resumed.metrics.len(), 8);
    assert_eq!(resumed.metrics[0].episode, 5);
    assert_eq!(
        fs::read(full.join("metrics.csv")).unwrap(),
        fs::read(split.join("metrics.csv")).unwrap()
    );
    let a = Checkpoint::load(&full.join("checkpoint.bwrd")).unwrap();
    let b = Checkpoint::load(&split.join("checkpoint.bwrd")).unwrap();
    assert_eq!(a.episodes_done, b.episodes_done);
    assert_eq!(a.total_steps, b.total_steps);
    assert_eq!(a.agent.actor.all_blocks(), b.agent.actor.all_blocks());
    assert_eq!(a.agent.critic.all_blocks(), b.agent.critic.all_blocks());
    assert_eq!(a.agent.buffer.raw_parts(), b.agent.buffer.raw_parts());
}

#[test]
fn resuming_under_a_different_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), POINT_MASS_SMALL);
    let out = dir.path().join("a");
    train(&cfg, &out, 1, None);
    let other = dir.path().join("other.conf");
    fs::write(&other, format!("{POINT_MASS_SMALL}\n[ou]\nsigma = 0.3\n")).unwrap();
    let err = cmd_train(&TrainArgs {
        config: Some(other),
        checkpoint: Some(out.join("checkpoint.bwrd")),
        out: Some(dir.path().join("b")),
        quiet: true,
        ..TrainArgs::default()
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
    assert!(!dir.path().join("b").exists());
}

#[test]
fn corrupted_checkpoint_fails_cleanly_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), POINT_MASS_SMALL);
    let out = dir.path().join("a");
    train(&cfg, &out, 1, None);
    let path = out.join("checkpoint.bwrd");
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    let bad = dir.path().join("bad.bwrd");
    fs::write(&bad, bytes).unwrap();

    let resumed_out = dir.path().join("resumed");
    let err = cmd_train(&TrainArgs {
        config: Some(cfg),
        checkpoint: Some(bad.clone()),
        out: Some(resumed_out.clone()),
        quiet: true,
        ..TrainArgs::default()
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
    assert!(err.to_string().contains("magic"), "{err}");
    assert!(!resumed_out.exists());

    let eval_out = dir.path().join("eval");
    let err = cmd_eval(&EvalArgs {
        checkpoint: bad,
        out: Some(eval_out.clone()),
        episodes: 1,
        ..EvalArgs::default()
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(!eval_out.exists());
}

#[test]
fn invalid_config_is_a_validation_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ddpg.gamma = 1.5\n");
    let err = cmd_train(&TrainArgs {
        config: Some(cfg),
        out: Some(dir.path().join("out")),
        quiet: true,
        ..TrainArgs::default()
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("gamma"), "{err}");
    assert!(!dir.path().join("out").exists());
}

fn untrained_biped(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, "");
    let out = dir.join("untrained");
    train(&cfg, &out, 0, None);
    out.join("checkpoint.bwrd")
}

#[test]
fn eval_is_deterministic_and_untrained_walker_always_falls() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = untrained_biped(dir.path());
    let run = |out: &str| {
        cmd_eval(&EvalArgs {
            checkpoint: ckpt.clone(),
            out: Some(dir.path().join(out)),
            seed: Some(5),
            episodes: 6,
            ..EvalArgs::default()
        })
        .unwrap()
    };
    let a = run("e1");
    let b = run("e2");
    assert_eq!(a, b);
    assert_eq!(a.task, Task::Biped);
    assert_eq!(a.fall_rate(), Some(1.0));
    let cap = RunConfig::default().env.biped.episode_cap;
    assert!(a.steps.iter().all(|&s| s < cap));
    assert_eq!(
        fs::read(dir.path().join("e1/summary.txt")).unwrap(),
        fs::read(dir.path().join("e2/summary.txt")).unwrap()
    );
    for k in 1..=6 {
        let trace = fs::read_to_string(dir.path().join(format!("e1/traces/episode_{k:04}.csv"))).unwrap();
        assert_eq!(gait::trace_from_csv(&trace).unwrap().len(), a.steps[k - 1]);
    }
}

#[test]
fn eval_of_zero_episodes_is_an_empty_success() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = untrained_biped(dir.path());
    let s = cmd_eval(&EvalArgs {
        checkpoint: ckpt,
        out: Some(dir.path().join("e")),
        episodes: 0,
        ..EvalArgs::default()
    })
    .unwrap();
    assert_eq!(s.episodes(), 0);
    assert_eq!(s.mean_return(), None);
    assert!(s.report().contains("episodes: 0"));
}

#[test]
fn eval_rejects_an_incompatible_config() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = untrained_biped(dir.path());
    let other = dir.path().join("other.conf");
    fs::write(&other, "robot.gravity = 1.6\n").unwrap();
    let err = cmd_eval(&EvalArgs {
        checkpoint: ckpt,
        config: Some(other),
        out: Some(dir.path().join("e")),
        episodes: 1,
        ..EvalArgs::default()
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn analyze_reports_gait_structure_and_reward_curves() {
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("walk.csv");
    gait::export_trace(&gait::synthetic_gait(1.2, 10.0, 50.0, 0.5), &trace_path, Format::Csv).unwrap();
    let returns: Vec<f64> = (0..250).map(|k| (k as f64 * 0.37).sin() * 10.0 + k as f64 * 0.1).collect();
    let mut metrics = format!("{METRICS_HEADER}\n");
    for (k, r) in returns.iter().enumerate() {
        metrics.push_str(&format!("{},10,{},0.1,1\n", k + 1, gait::fmt_f64(*r)));
    }
    let metrics_path = dir.path().join("metrics.csv");
    fs::write(&metrics_path, metrics).unwrap();

    let args = |out: &str| AnalyzeArgs {
        inputs: vec![trace_path.clone(), metrics_path.clone()],
        out: dir.path().join(out),
        window: Some(100),
        config: None,
    };
    let report = cmd_analyze(&args("a1")).unwrap();
    let value = |key: &str| -> f64 {
        let line = report.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("{key} missing:\n{report}"));
        line.split(':').nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap()
    };
    assert!((value("hip_phase_rad") - std::f64::consts::PI).abs() <= 0.1, "{report}");
    assert!((value("knee_hip_frequency_ratio") - 2.0).abs() <= 0.05, "{report}");
    assert!((value("average_speed") - 0.5).abs() < 1e-9, "{report}");
    assert_eq!(value("curve_points"), 250.0);
    let curve = fs::read_to_string(dir.path().join("a1/metrics_reward_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 251);

    cmd_analyze(&args("a2")).unwrap();
    for name in ["walk_hips.svg", "walk_knees.svg", "metrics_reward_curve.svg", "report.txt"] {
        let a = fs::read(dir.path().join("a1").join(name)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("a2").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn analyze_points_at_the_malformed_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    fs::write(&path, format!("{METRICS_HEADER}\n1,10,-3.5,0.1,1\n2,10,oops,0.1,1\n")).unwrap();
    let err = cmd_analyze(&AnalyzeArgs {
        inputs: vec![path],
        out: dir.path().join("out"),
        window: None,
        config: None,
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("line 3"), "{err}");
}

#[test]
fn physics_checks_pass_on_defaults() {
    let outcomes = cmd_physics_check(&CheckArgs::default()).unwrap();
    assert!(outcomes.len() >= 4);
    assert!(outcomes.iter().all(|o| o.passed));
}

#[test]
fn zero_gravity_drop_does_not_accelerate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[robot]\ngravity = 0\n");
    let outcomes = physics_report(&CheckArgs { config: Some(cfg) }).unwrap();
    let drop = outcomes.iter().find(|o| o.name == "free-drop").unwrap();
    assert_eq!(drop.measured, 0.0);
    assert!(drop.passed);
}

#[test]
fn zero_contact_stiffness_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "robot.contact_stiffness = 0\n");
    let err = cmd_physics_check(&CheckArgs { config: Some(cfg) }).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("contact_stiffness"), "{err}");
}

#[test]
fn binary_maps_errors_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_bwr");
    let ok = Process::new(bin).arg("physics-check").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&ok.stdout).lines().filter(|l| l.starts_with("[PASS]")).count(), 5);

    let bad = write_config(dir.path(), "robot.contact_stiffness = 0\n");
    let out = Process::new(bin).args(["physics-check", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let missing = Process::new(bin)
        .args(["eval", "--checkpoint"])
        .arg(dir.path().join("nope.bwrd"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(CliError::CheckFailed { failed: 1, total: 5 }.exit_code(), 3);
}
