//! Subcommands of the `bwr` tool. Each `cmd_*` function is the whole
//! command minus argument parsing, so tests can drive it directly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bwr_core::checkpoint::{write_atomic, Checkpoint, CheckpointError};
use bwr_core::checks::{self, CheckOutcome};
use bwr_core::config::{ConfigError, RunConfig, Task};
use bwr_core::ddpg::{Agent, DdpgError, EpisodeMetrics, SeedPlan, Trainer};
use bwr_core::env::Environment;
use bwr_core::gait::{self, fmt_f64, Format, GaitError, GaitTrace};
use bwr_core::nn::Parametric;
use clap::{Args, Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{failed} of {total} checks failed")]
    CheckFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::CheckFailed { .. } => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(m) => CliError::Runtime(m),
            other => CliError::Validation(format!("config: {other}")),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(io) => CliError::Runtime(format!("checkpoint: {io}")),
            other => CliError::Validation(format!("checkpoint: {other}")),
        }
    }
}

impl From<DdpgError> for CliError {
    fn from(e: DdpgError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<GaitError> for CliError {
    fn from(e: GaitError) -> Self {
        match e {
            GaitError::Io(io) => CliError::Runtime(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "bwr", version, about = "Train, evaluate and analyze a DDPG-controlled planar biped")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent; writes metrics, checkpoints and a reward curve.
    Train(TrainArgs),
    /// Greedy rollouts of a checkpointed agent; writes traces and a summary.
    Eval(EvalArgs),
    /// Reward curves, joint plots and a gait report from CSV files.
    Analyze(AnalyzeArgs),
    /// Energy, mass-matrix, stance and pendulum checks of the configured robot.
    PhysicsCheck(CheckArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// Config file; defaults apply to omitted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory (overrides run.out_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides env.seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total episodes (overrides run.episodes).
    #[arg(long)]
    pub episodes: Option<u64>,
    /// Suppress progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Must match the configuration stored in the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub episodes: u64,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AnalyzeArgs {
    /// Metrics CSVs (from train) and/or trace CSVs (from eval).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Trailing window of the reward curve; defaults to run.curve_window.
    #[arg(long)]
    pub window: Option<usize>,
    /// Supplies run.curve_window when --window is absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|s| println!("{}", s.report())),
        Command::Eval(a) => cmd_eval(&a).map(|s| print!("{}", s.report())),
        Command::Analyze(a) => cmd_analyze(&a).map(|r| print!("{r}")),
        Command::PhysicsCheck(a) => cmd_physics_check(&a).map(|_| ()),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

pub const METRICS_HEADER: &str = "episode,steps,return,distance_m,fell";
pub const TIMING_HEADER: &str = "episode,wall_ms";

pub fn metrics_row(m: &EpisodeMetrics) -> String {
    format!("{},{},{},{},{}", m.episode, m.steps, fmt_f64(m.ret), fmt_f64(m.distance), m.fell as u8)
}

/// Header plus the rows of an existing CSV whose first column is at most
/// `upto`; a missing file yields just the header.
fn retained_rows(path: &Path, header: &str, upto: u64) -> Result<String, CliError> {
    let mut out = format!("{header}\n");
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines().skip(1) {
            let keep = line.split(',').next().and_then(|e| e.parse::<u64>().ok()).is_some_and(|e| e <= upto);
            if keep {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub config: RunConfig,
    /// Episodes run by this invocation.
    pub metrics: Vec<EpisodeMetrics>,
    pub episodes_done: u64,
    pub final_checkpoint: PathBuf,
}

impl TrainSummary {
    pub fn report(&self) -> String {
        let returns: Vec<f64> = self.metrics.iter().map(|m| m.ret).collect();
        let curve = gait::reward_curve(&returns, self.config.run.curve_window);
        let mut s = format!(
            "trained {} episodes (total {}); outputs in {}",
            self.metrics.len(),
            self.episodes_done,
            self.out_dir.display()
        );
        if let Some(last) = curve.last() {
            let _ = write!(s, "\nfinal trailing-{} mean return: {last:.4}", self.config.run.curve_window);
        }
        s
    }
}

pub fn checkpoint_name(episode: u64) -> String {
    format!("episode_{episode:06}.bwrd")
}

/// Trains for `run.episodes` total episodes, resuming from a checkpoint when
/// given. Inputs are validated before anything is written.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary, CliError> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.env.seed = seed;
    }
    if let Some(m) = args.episodes {
        config.run.episodes = m;
    }
    if let Some(out) = &args.out {
        config.run.out_dir = out.to_string_lossy().into_owned();
    }
    config.validate()?;

    let mut trainer = match &args.checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config.fingerprint() != config.fingerprint() {
                return Err(CliError::Validation(format!(
                    "checkpoint {} was produced by a different configuration",
                    path.display()
                )));
            }
            ckpt.into_trainer()?
        }
        None => {
            let seeds = config.seeds();
            let agent = match config.env.task {
                Task::Biped => Agent::for_env(&config.biped_env(), config.ddpg.clone(), seeds.init),
                Task::PointMass => Agent::for_env(&config.point_mass_env(), config.ddpg.clone(), seeds.init),
            }
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            Trainer::new(agent, seeds, config.episode_steps())
        }
    };

    let out = PathBuf::from(&config.run.out_dir);
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    fs::write(out.join("config.txt"), config.echo()).map_err(io_err(&out))?;

    let start = trainer.episodes_done;
    let metrics_path = out.join("metrics.csv");
    let timing_path = out.join("timing.csv");
    write_atomic(&metrics_path, retained_rows(&metrics_path, METRICS_HEADER, start)?.as_bytes())?;
    write_atomic(&timing_path, retained_rows(&timing_path, TIMING_HEADER, start)?.as_bytes())?;
    let open_append = |p: &Path| fs::OpenOptions::new().append(true).open(p).map_err(io_err(p));
    let mut metrics_file = open_append(&metrics_path)?;
    let mut timing_file = open_append(&timing_path)?;

    let remaining = config.run.episodes.saturating_sub(start);
    let interval = config.run.checkpoint_interval;
    let progress_every = (config.run.episodes / 20).max(1);
    let mut clock = Instant::now();
    let mut on_episode = |t: &Trainer, m: &EpisodeMetrics| -> Result<(), DdpgError> {
        let fail = |e: String| DdpgError::Callback(e);
        if !m.ret.is_finite() || !t.agent.actor.is_finite() || !t.agent.critic.is_finite() {
            return Err(fail(format!("non-finite values after episode {}", m.episode)));
        }
        writeln!(metrics_file, "{}", metrics_row(m)).map_err(|e| fail(e.to_string()))?;
        let wall = clock.elapsed().as_secs_f64() * 1e3;
        clock = Instant::now();
        writeln!(timing_file, "{},{wall:.3}", m.episode).map_err(|e| fail(e.to_string()))?;
        if interval > 0 && m.episode.is_multiple_of(interval) {
            Checkpoint::from_trainer(&config, t)
                .save(&ckpt_dir.join(checkpoint_name(m.episode)))
                .map_err(|e| fail(e.to_string()))?;
        }
        if !args.quiet && m.episode.is_multiple_of(progress_every) {
            println!(
                "episode {:>6}  steps {:>5}  return {:>12.4}  distance {:>8.3}  fell {}",
                m.episode, m.steps, m.ret, m.distance, m.fell
            );
        }
        Ok(())
    };
    let metrics = match config.env.task {
        Task::Biped => trainer.train(&mut config.biped_env(), remaining, &mut on_episode)?,
        Task::PointMass => trainer.train(&mut config.point_mass_env(), remaining, &mut on_episode)?,
    };

    let final_checkpoint = out.join("checkpoint.bwrd");
    Checkpoint::from_trainer(&config, &trainer).save(&final_checkpoint)?;
    let all_returns = read_metrics(&fs::read_to_string(&metrics_path).map_err(io_err(&metrics_path))?)?;
    let window = config.run.curve_window;
    gait::export_curve(&all_returns, window, &out.join("reward_curve.csv"), Format::Csv)?;
    gait::export_curve(&all_returns, window, &out.join("reward_curve.svg"), Format::Svg)?;

    Ok(TrainSummary {
        out_dir: out,
        config,
        metrics,
        episodes_done: trainer.episodes_done,
        final_checkpoint,
    })
}

/// Episode returns from a metrics CSV, with line-numbered diagnostics.
pub fn read_metrics(text: &str) -> Result<Vec<f64>, CliError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| CliError::Validation(format!("metrics: {e}")))?.clone();
    let col = header
        .iter()
        .position(|h| h == "return")
        .ok_or_else(|| CliError::Validation("metrics line 1: no 'return' column".into()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Validation(format!("metrics: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = rec.get(col).unwrap_or("");
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("metrics line {line}: cannot parse return '{field}'")))?;
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub task: Task,
    pub returns: Vec<f64>,
    pub speeds: Vec<f64>,
    pub falls: Vec<bool>,
    pub steps: Vec<usize>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl EvalSummary {
    pub fn episodes(&self) -> usize {
        self.returns.len()
    }
    pub fn mean_return(&self) -> Option<f64> {
        mean(&self.returns)
    }
    pub fn mean_speed(&self) -> Option<f64> {
        mean(&self.speeds)
    }
    pub fn fall_rate(&self) -> Option<f64> {
        let f: Vec<f64> = self.falls.iter().map(|f| *f as u8 as f64).collect();
        mean(&f)
    }

    pub fn report(&self) -> String {
        let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
        format!(
            "episodes: {}\nmean_return: {}\nmean_speed_m_per_s: {}\nfall_rate: {}\n",
            self.episodes(),
            show(self.mean_return()),
            show(self.mean_speed()),
            show(self.fall_rate())
        )
    }
}

/// Seed of evaluation episode `k` (0-based) under master seed `seed`.
pub fn eval_episode_seeds(seed: u64, episodes: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(SeedPlan::from_master(seed).env);
    (0..episodes).map(|_| rng.next_u64()).collect()
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalSummary, CliError> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    if let Some(path) = &args.config {
        if RunConfig::load(path)?.fingerprint() != ckpt.config.fingerprint() {
            return Err(CliError::Validation(format!(
                "config {} is incompatible with checkpoint {}",
                path.display(),
                args.checkpoint.display()
            )));
        }
    }
    let config = ckpt.config;
    let agent = ckpt.agent;
    let seed = args.seed.unwrap_or(config.env.seed);
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&config.run.out_dir).join("eval"));
    let trace_dir = out.join("traces");
    fs::create_dir_all(&trace_dir).map_err(io_err(&trace_dir))?;

    let seeds = eval_episode_seeds(seed, args.episodes);
    let mut summary = EvalSummary {
        task: config.env.task,
        returns: Vec::new(),
        speeds: Vec::new(),
        falls: Vec::new(),
        steps: Vec::new(),
    };
    for (k, &s) in seeds.iter().enumerate() {
        match config.env.task {
            Task::Biped => {
                let mut env = config.biped_env();
                let r = gait::rollout(&agent, &mut env, s)?;
                summary.returns.push(r.ret);
                summary.speeds.push(r.mean_speed(config.env.biped.control_period()));
                summary.falls.push(r.fell);
                summary.steps.push(r.trace.len());
                gait::export_trace(&r.trace, &trace_dir.join(format!("episode_{:04}.csv", k + 1)), Format::Csv)?;
            }
            Task::PointMass => {
                let mut env = config.point_mass_env();
                let mut obs = env.reset(s);
                let (mut ret, mut steps) = (0.0, 0);
                loop {
                    let step = env.step(&agent.policy(&obs)?).map_err(DdpgError::from)?;
                    ret += step.reward;
                    steps += 1;
                    obs = step.observation;
                    if step.done {
                        break;
                    }
                }
                summary.returns.push(ret);
                summary.speeds.push(0.0);
                summary.falls.push(false);
                summary.steps.push(steps);
            }
        }
    }
    let mut csv = String::from("episode,seed,steps,return,speed_m_per_s,fell\n");
    for (k, seed) in seeds.iter().enumerate().take(summary.episodes()) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            k + 1,
            seed,
            summary.steps[k],
            fmt_f64(summary.returns[k]),
            fmt_f64(summary.speeds[k]),
            summary.falls[k] as u8
        );
    }
    fs::write(out.join("episodes.csv"), csv).map_err(io_err(&out))?;
    fs::write(out.join("summary.txt"), summary.report()).map_err(io_err(&out))?;
    Ok(summary)
}

enum Input {
    Metrics(Vec<f64>),
    Trace(GaitTrace),
}

fn read_input(path: &Path) -> Result<Input, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let first = text.lines().next().unwrap_or("");
    let ctx = |e: CliError| match e {
        CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
        other => other,
    };
    if first.starts_with("time,") {
        Ok(Input::Trace(gait::trace_from_csv(&text).map_err(|e| ctx(e.into()))?))
    } else if first.split(',').any(|h| h == "return") {
        Ok(Input::Metrics(read_metrics(&text).map_err(ctx)?))
    } else {
        Err(CliError::Validation(format!(
            "{} line 1: neither a metrics nor a trace header",
            path.display()
        )))
    }
}

/// Writes figures for each input into `out` and returns the text report,
/// which is also saved as `report.txt`.
pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<String, CliError> {
    let window = match args.window {
        Some(w) if w > 0 => w,
        Some(_) => return Err(CliError::Validation("--window must be positive".into())),
        None => load_config(args.config.as_deref())?.run.curve_window,
    };
    let inputs = args
        .inputs
        .iter()
        .map(|p| read_input(p).map(|i| (p, i)))
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let mut report = String::new();
    for (path, input) in inputs {
        let stem = path.file_stem().map_or("input".into(), |s| s.to_string_lossy().into_owned());
        let _ = writeln!(report, "== {}", path.display());
        match input {
            Input::Metrics(returns) => {
                gait::export_curve(&returns, window, &args.out.join(format!("{stem}_reward_curve.svg")), Format::Svg)?;
                gait::export_curve(&returns, window, &args.out.join(format!("{stem}_reward_curve.csv")), Format::Csv)?;
                let curve = gait::reward_curve(&returns, window);
                let _ = writeln!(report, "episodes: {}", returns.len());
                let _ = writeln!(report, "curve_points: {}", curve.len());
                match curve.last() {
                    Some(v) => writeln!(report, "final_trailing_mean_return: {v:.6}"),
                    None => writeln!(report, "final_trailing_mean_return: n/a"),
                }
                .ok();
            }
            Input::Trace(trace) => {
                fs::write(
                    args.out.join(format!("{stem}_hips.svg")),
                    gait::joint_svg(&trace, [0, 1], "Hip joint angles"),
                )
                .map_err(io_err(&args.out))?;
                fs::write(
                    args.out.join(format!("{stem}_knees.svg")),
                    gait::joint_svg(&trace, [2, 3], "Knee joint angles"),
                )
                .map_err(io_err(&args.out))?;
                match gait::analyze(&trace) {
                    Ok(r) => report.push_str(&r.to_string()),
                    Err(e) => {
                        let _ = writeln!(report, "gait analysis unavailable: {e}");
                    }
                }
            }
        }
    }
    fs::write(args.out.join("report.txt"), &report).map_err(io_err(&args.out))?;
    Ok(report)
}

/// Runs the dynamics checks against the configured robot.
pub fn physics_report(args: &CheckArgs) -> Result<Vec<CheckOutcome>, CliError> {
    let config = load_config(args.config.as_deref())?;
    Ok(checks::run_all(&config.robot_spec()))
}

pub fn cmd_physics_check(args: &CheckArgs) -> Result<Vec<CheckOutcome>, CliError> {
    let outcomes = physics_report(args)?;
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(CliError::CheckFailed {
            failed,
            total: outcomes.len(),
        });
    }
    Ok(outcomes)
}
