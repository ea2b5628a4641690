//! Acceptance criteria, one PASS/FAIL line each. Lines go straight to stdout
//! so they show up without `--nocapture`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use bwr_cli::{cmd_eval, cmd_train, EvalArgs, TrainArgs};
use bwr_core::checkpoint::Checkpoint;
use bwr_core::checks;
use bwr_core::config::RunConfig;
use bwr_core::ddpg::{
    actor_objective_and_gradient, critic_loss_and_gradient, Agent, DdpgConfig, OuNoise, OuParams, ReplayBuffer,
    SeedPlan, Trainer, Transition,
};
use bwr_core::dynamics::{mass_matrix, RobotSpec};
use bwr_core::env::{Environment, PointMassEnv};
use bwr_core::gait::{self, Format};
use bwr_core::nn::{soft_update, Batch, Critic, Mlp, Mode, Parametric};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Verdict {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(v: &Verdict, elapsed: Duration) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "[{}] {}: {} ({:.1} s)",
        if v.passed { "PASS" } else { "FAIL" },
        v.name,
        v.detail,
        elapsed.as_secs_f64()
    );
}

fn timed(f: impl FnOnce() -> Verdict) -> (Verdict, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn within_budget(mut v: Verdict, elapsed: Duration, budget: Duration) -> Verdict {
    if elapsed > budget {
        v.passed = false;
        v.detail = format!("{}; exceeded the {} s budget", v.detail, budget.as_secs());
    }
    v
}

/// The floor sits above central-difference round-off, about
/// `f64::EPSILON * |f| / EPS` ≈ 2e-11 for losses of order one.
fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6)
}

fn critic_loss(critic: &Critic, s: &Batch, a: &Batch, y: &[f64]) -> f64 {
    let (q, _) = critic.forward(s, a, Mode::Train).unwrap();
    q.iter().zip(y).map(|(q, y)| (q - y).powi(2)).sum::<f64>() / y.len() as f64
}

fn actor_objective(actor: &Mlp, critic: &Critic, s: &Batch) -> f64 {
    let (a, _) = actor.forward(s, Mode::Train).unwrap();
    let (q, _) = critic.forward(s, &a, Mode::Train).unwrap();
    q.mean()
}

/// Worst relative error of `analytic` against central differences of `f`.
fn worst_fd_error<P: Parametric + Clone>(net: &P, analytic: &[Batch], f: impl Fn(&P) -> f64) -> f64 {
    const EPS: f64 = 1e-5;
    let mut worst: f64 = 0.0;
    for (b, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let mut plus = net.clone();
            plus.trainable_mut()[b][k] += EPS;
            let mut minus = net.clone();
            minus.trainable_mut()[b][k] -= EPS;
            let fd = (f(&plus) - f(&minus)) / (2.0 * EPS);
            worst = worst.max(rel_err(fd, grad[k]));
        }
    }
    worst
}

fn gradient_fidelity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let instances = 24;
    let (mut worst_actor, mut worst_critic): (f64, f64) = (0.0, 0.0);
    for i in 0..instances {
        let obs = rng.random_range(1..=4);
        let act = rng.random_range(1..=3);
        let config = DdpgConfig {
            actor_hidden: vec![rng.random_range(2..=6), rng.random_range(2..=6)],
            critic_state_width: rng.random_range(2..=6),
            critic_head_width: rng.random_range(2..=6),
            batch_norm: i % 2 == 1,
            ..DdpgConfig::default()
        };
        let agent = Agent::new(obs, act, rng.random_range(0.5..3.0), config, rng.random()).unwrap();
        let n = rng.random_range(3..=6);
        let states = Batch::from_fn(n, obs, |_, _| rng.random_range(-1.5..1.5));
        let actions = Batch::from_fn(n, act, |_, _| rng.random_range(-1.0..1.0));
        let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();

        let (_, g) = critic_loss_and_gradient(&agent.critic, &states, &actions, &targets).unwrap();
        worst_critic = worst_critic.max(worst_fd_error(&agent.critic, &g, |c| critic_loss(c, &states, &actions, &targets)));
        let (_, g) = actor_objective_and_gradient(&agent.actor, &agent.critic, &states).unwrap();
        worst_actor = worst_actor.max(worst_fd_error(&agent.actor, &g, |a| actor_objective(a, &agent.critic, &states)));
    }
    let worst = worst_actor.max(worst_critic);
    Verdict {
        name: "gradient fidelity",
        passed: worst <= 1e-4,
        detail: format!(
            "{instances} instances, worst relative error critic {worst_critic:.2e}, actor {worst_actor:.2e} (limit 1e-4)"
        ),
    }
}

fn ou_statistics() -> Verdict {
    let params = OuParams::default();
    let (theta, sigma) = (params.theta, params.sigma);
    let oracle_std = sigma / (2.0 * theta - theta * theta).sqrt();
    let mut noise = OuNoise::new(params, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let steps = 1_000_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..steps {
        let x = noise.sample(&mut rng)[0];
        sum += x;
        sum_sq += x * x;
    }
    let mean = sum / steps as f64;
    let std = (sum_sq / steps as f64 - mean * mean).sqrt();
    let std_err = (std - oracle_std).abs() / oracle_std;
    Verdict {
        name: "OU statistics",
        passed: mean.abs() <= 0.002 && std_err <= 0.02 && (oracle_std - 0.18984).abs() < 1e-4,
        detail: format!("mean {mean:+.5} (±0.002), std {std:.5} vs {oracle_std:.5} ({:.2}% of 2%)", std_err * 100.0),
    }
}

fn soft_update_law() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let source = Agent::new(3, 2, 1.0, DdpgConfig::default(), 1).unwrap().actor;
    let mut target = Agent::new(3, 2, 1.0, DdpgConfig::default(), 2).unwrap().actor;
    for block in target.all_blocks_mut() {
        block.iter_mut().for_each(|v| *v += rng.random_range(-1.0..1.0));
    }
    let gap = |t: &Mlp| -> f64 {
        t.all_blocks()
            .iter()
            .zip(source.all_blocks())
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    };
    let tau = 0.001;
    let g0 = gap(&target);
    let mut worst: f64 = 0.0;
    for k in 1..=200 {
        soft_update(&mut target, &source, tau).unwrap();
        let expected = g0 * (1.0 - tau).powi(k);
        worst = worst.max((gap(&target) - expected).abs() / expected);
    }
    let mut hard = Agent::new(3, 2, 1.0, DdpgConfig::default(), 9).unwrap().actor;
    soft_update(&mut hard, &source, 1.0).unwrap();
    let copied = hard.all_blocks() == source.all_blocks();
    Verdict {
        name: "soft-update law",
        passed: worst <= 1e-12 && copied,
        detail: format!("200 updates at tau 0.001, worst relative deviation from (1-tau)^k {worst:.1e}; tau = 1 exact copy: {copied}"),
    }
}

fn tagged(tag: usize) -> Transition {
    Transition {
        s: vec![tag as f64],
        a: vec![0.0],
        r: tag as f64,
        s_next: vec![0.0],
        done: false,
    }
}

fn replay_buffer() -> Verdict {
    let mut buf = ReplayBuffer::new(10);
    let mut ceiling = true;
    for k in 0..25 {
        buf.store(tagged(k));
        ceiling &= buf.len() == (k + 1).min(10);
    }
    let kept: Vec<usize> = buf.iter().map(|t| t.r as usize).collect();
    let fifo = kept == (15..25).collect::<Vec<_>>();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 100_000;
    let mut counts = [0usize; 25];
    for _ in 0..draws / 10 {
        for t in buf.sample(10, &mut rng).unwrap() {
            counts[t.r as usize] += 1;
        }
    }
    let expected = draws as f64 / 10.0;
    let chi2: f64 = counts[15..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new(9.0).unwrap().inverse_cdf(0.999);
    Verdict {
        name: "replay buffer",
        passed: ceiling && fifo && chi2 < critical,
        detail: format!(
            "capacity ceiling {ceiling}, FIFO eviction {fifo}, chi-square {chi2:.2} < {critical:.2} (1e5 draws, 10 bins, alpha 0.001)"
        ),
    }
}

/// Compound pendulum of two uniform rods hinged at the top, knee locked.
fn pendulum_oracle(config: &RunConfig) -> f64 {
    let r = &config.robot;
    let (mt, ms, lt, ls) = (r.thigh_mass, r.shank_mass, r.thigh_length, r.shank_length);
    let m = mt + ms;
    let d = (mt * lt / 2.0 + ms * (lt + ls / 2.0)) / m;
    let inertia = mt * lt * lt / 3.0 + ms * ls * ls / 12.0 + ms * (lt + ls / 2.0).powi(2);
    2.0 * PI * (inertia / (m * r.gravity * d)).sqrt()
}

fn physics_sanity() -> Verdict {
    let config = RunConfig::default();
    let spec: RobotSpec = config.robot_spec();
    let r = &config.robot;

    let drift = checks::airborne_energy_drift(&spec, 1000).unwrap();
    let a = drift < 1e-3;

    let weight = (r.waist_mass + 2.0 * r.thigh_mass + 2.0 * r.shank_mass) * r.gravity;
    let force = checks::settled_stance_force(&spec, 2.0).unwrap();
    let b = (force - weight).abs() / weight <= 0.02 && (weight - 5.822).abs() / 5.822 < 1e-3;

    let oracle = pendulum_oracle(&config);
    let period = checks::simulated_pendulum_period(&spec, 5f64.to_radians(), 6.0 * oracle).unwrap();
    let c = (period - oracle).abs() / oracle <= 0.01;

    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let (mut asym, mut spd): (f64, bool) = (0.0, true);
    for _ in 0..1000 {
        let m = mass_matrix(&spec, &checks::random_state(&spec, &mut rng));
        asym = asym.max((m - m.transpose()).abs().max());
        spd &= m.cholesky().is_some();
    }
    let d = asym <= 1e-10 && spd;
    Verdict {
        name: "physics sanity",
        passed: a && b && c && d,
        detail: format!(
            "(a) energy drift {drift:.2e} < 1e-3: {a}; (b) stance force {force:.4} N vs {weight:.4} N ±2%: {b}; \
             (c) pendulum {period:.5} s vs {oracle:.5} s ±1%: {c}; (d) 1000 states max asymmetry {asym:.1e}, all SPD: {d}"
        ),
    }
}

/// Optimal cost-to-go coefficient of x ← x + a with stage cost x² + ρa²
/// over `horizon` steps: V₀(x) = P₀ x².
fn riccati_p0(horizon: usize, rho: f64) -> f64 {
    let mut p = 0.0;
    for _ in 0..horizon {
        p = 1.0 + p - p * p / (rho + p);
    }
    p
}

fn point_mass_learning() -> Verdict {
    let config = RunConfig::point_mass_preset();
    let p0 = riccati_p0(config.env.point_mass_horizon, config.env.point_mass_effort);
    let eval_seeds: Vec<u64> = (0..100).map(|k| 1_000_000 + k).collect();
    let optimum = -p0 * eval_seeds.iter().map(|&s| PointMassEnv::initial_position(s).powi(2)).sum::<f64>() / 100.0;
    let mut ratios = Vec::new();
    for master in 1..=3 {
        let mut env = config.point_mass_env();
        let seeds = SeedPlan::from_master(master);
        let agent = Agent::for_env(&env, config.ddpg.clone(), seeds.init).unwrap();
        let mut trainer = Trainer::new(agent, seeds, config.episode_steps());
        trainer.train(&mut env, config.run.episodes, |_, _| Ok(())).unwrap();
        let mean = eval_seeds
            .iter()
            .map(|&s| Trainer::evaluate(&trainer.agent, &mut env, s, config.episode_steps()).unwrap())
            .sum::<f64>()
            / 100.0;
        ratios.push(mean / optimum);
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[1];
    Verdict {
        name: "point-mass learning",
        passed: median <= 1.15 && config.run.episodes <= 300,
        detail: format!(
            "{} episodes, return/optimum per seed {:?}, median {median:.3} (limit 1.15; optimum {optimum:.4}, P0 {p0:.4})",
            config.run.episodes,
            ratios.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    }
}

fn gait_analyzer() -> Verdict {
    let mut worst_phase: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for (hz, speed) in [(0.7, 0.3), (1.0, 0.5), (1.3, 0.8), (1.9, 0.2)] {
        let report = gait::analyze(&gait::synthetic_gait(hz, 12.0, 50.0, speed)).unwrap();
        worst_phase = worst_phase.max((report.hip_phase.clone().unwrap_or(f64::NAN) - PI).abs());
        worst_ratio = worst_ratio.max((report.frequency_ratio().unwrap_or(f64::NAN) - 2.0).abs());
    }
    Verdict {
        name: "gait analyzer",
        passed: worst_phase <= 0.1 && worst_ratio <= 0.05,
        detail: format!("4 constructed traces, worst |phase - pi| {worst_phase:.4} (0.1), worst |ratio - 2| {worst_ratio:.4} (0.05)"),
    }
}

fn greedy_actions(agent: &Agent, config: &RunConfig, seed: u64) -> Vec<Vec<f64>> {
    let mut env = config.biped_env();
    let mut obs = env.reset(seed);
    let mut actions = Vec::new();
    for _ in 0..config.env.biped.episode_cap {
        let a = agent.policy(&obs).unwrap();
        let step = env.step(&a).unwrap();
        actions.push(a);
        obs = step.observation;
        if step.done {
            break;
        }
    }
    actions
}

fn biped_smoke(dir: &Path) -> Verdict {
    let mut config = RunConfig::default();
    config.run.episodes = 200;
    let mut env = config.biped_env();
    let seeds = config.seeds();
    let agent = Agent::for_env(&env, config.ddpg.clone(), seeds.init).unwrap();
    let mut trainer = Trainer::new(agent, seeds, config.episode_steps());
    let mut finite = true;
    let metrics = trainer
        .train(&mut env, config.run.episodes, |t, m| {
            finite &= m.ret.is_finite() && m.distance.is_finite() && t.agent.actor.is_finite() && t.agent.critic.is_finite();
            Ok(())
        })
        .unwrap();
    let returns: Vec<f64> = metrics.iter().map(|m| m.ret).collect();
    let curve_path = dir.join("reward_curve.csv");
    gait::export_curve(&returns, 100, &curve_path, Format::Csv).unwrap();
    gait::export_curve(&returns, 100, &dir.join("reward_curve.svg"), Format::Svg).unwrap();
    let curve_points = fs::read_to_string(&curve_path).unwrap().lines().count() - 1;
    let curve = gait::reward_curve(&returns, 100);
    let first = curve[99];
    let last = curve[199];

    let path = dir.join("smoke.bwrd");
    Checkpoint::from_trainer(&config, &trainer).save(&path).unwrap();
    let restored = Checkpoint::load(&path).unwrap().agent;
    let identical = (0..3).all(|s| {
        let a = greedy_actions(&trainer.agent, &config, 500 + s);
        let b = greedy_actions(&restored, &config, 500 + s);
        a.len() == b.len()
            && a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let eval = cmd_eval(&EvalArgs {
        checkpoint: path,
        out: Some(dir.join("eval")),
        episodes: 2,
        ..EvalArgs::default()
    });
    let eval_ok = eval.as_ref().is_ok_and(|s| s.returns.iter().all(|r| r.is_finite()));
    Verdict {
        name: "biped training smoke",
        passed: finite && curve_points == 200 && identical && eval_ok && metrics.len() == 200,
        detail: format!(
            "200 episodes finite: {finite}; trailing-100 curve points {curve_points}; restored greedy actions bitwise equal: {identical}; \
             eval ok: {eval_ok}; curve {first:.3} at episode 100 -> {last:.3} at 200 (informational)"
        ),
    }
}

fn determinism(dir: &Path) -> Verdict {
    let run = |config: &Path, out: &str, episodes: u64| {
        cmd_train(&TrainArgs {
            config: Some(config.to_path_buf()),
            out: Some(dir.join(out)),
            episodes: Some(episodes),
            seed: Some(17),
            quiet: true,
            ..TrainArgs::default()
        })
        .unwrap();
        fs::read(dir.join(out).join("metrics.csv")).unwrap()
    };
    let biped = dir.join("biped.conf");
    fs::write(&biped, "[ddpg]\nwarmup = 100\n").unwrap();
    let point_mass = dir.join("point_mass.conf");
    fs::write(&point_mass, RunConfig::point_mass_preset().echo()).unwrap();
    let biped_same = run(&biped, "b1", 30) == run(&biped, "b2", 30);
    let pm_same = run(&point_mass, "p1", 40) == run(&point_mass, "p2", 40);
    Verdict {
        name: "training determinism",
        passed: biped_same && pm_same,
        detail: format!("metrics.csv byte-identical across repeat runs: biped {biped_same}, point mass {pm_same}"),
    }
}

#[test]
fn acceptance_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let _ = writeln!(std::io::stdout().lock());
    let mut verdicts = Vec::new();
    let mut run = |f: &dyn Fn() -> Verdict, budget: Option<Duration>| {
        let (v, elapsed) = timed(f);
        let v = match budget {
            Some(b) => within_budget(v, elapsed, b),
            None => v,
        };
        report(&v, elapsed);
        verdicts.push(v);
    };
    run(&gradient_fidelity, Some(Duration::from_secs(60)));
    run(&ou_statistics, Some(Duration::from_secs(10)));
    run(&soft_update_law, None);
    run(&replay_buffer, None);
    run(&physics_sanity, None);
    run(&point_mass_learning, Some(Duration::from_secs(300)));
    run(&gait_analyzer, None);
    run(&|| biped_smoke(dir.path()), None);
    run(&|| determinism(dir.path()), None);
    let failed: Vec<&str> = verdicts.iter().filter(|v| !v.passed).map(|v| v.name).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
