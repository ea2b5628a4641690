//! Run configuration: a line-oriented `[section]` / `key = value` format,
//! defaults for omitted keys, validation, a lossless echo and a fingerprint.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ddpg::{DdpgConfig, OuParams, SeedPlan};
use crate::dynamics::{build_default_robot, JointLimits, LinkName, LinkSpec, RobotSpec};
use crate::env::{BipedEnv, EnvConfig, PointMassEnv};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("invalid {key}: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

impl ConfigError {
    fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Biped,
    PointMass,
}

/// Left and right legs share their link parameters; inertias follow the
/// uniform-rod rule.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotParams {
    pub waist_mass: f64,
    pub thigh_mass: f64,
    pub shank_mass: f64,
    pub waist_length: f64,
    pub thigh_length: f64,
    pub shank_length: f64,
    pub limits: JointLimits,
    pub gravity: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub friction_coefficient: f64,
    pub friction_viscosity: f64,
    pub fall_height_fraction: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        let d = build_default_robot();
        RobotParams {
            waist_mass: d.link(LinkName::Waist).mass,
            thigh_mass: d.link(LinkName::ThighR).mass,
            shank_mass: d.link(LinkName::ShankR).mass,
            waist_length: d.link(LinkName::Waist).length,
            thigh_length: d.link(LinkName::ThighR).length,
            shank_length: d.link(LinkName::ShankR).length,
            limits: d.limits.clone(),
            gravity: d.gravity,
            contact_stiffness: d.contact_stiffness,
            contact_damping: d.contact_damping,
            friction_coefficient: d.friction_coefficient,
            friction_viscosity: d.friction_viscosity,
            fall_height_fraction: d.fall_height_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSettings {
    pub task: Task,
    /// Master seed; see [`SeedPlan`].
    pub seed: u64,
    pub torque_limit: f64,
    pub biped: EnvConfig,
    pub point_mass_horizon: usize,
    pub point_mass_effort: f64,
    pub point_mass_bound: f64,
    pub point_mass_limit: f64,
}

impl Default for EnvSettings {
    fn default() -> Self {
        let pm = PointMassEnv::default();
        EnvSettings {
            task: Task::Biped,
            seed: 0,
            torque_limit: build_default_robot().torque_limit,
            biped: EnvConfig::default(),
            point_mass_horizon: pm.horizon,
            point_mass_effort: pm.effort_weight,
            point_mass_bound: pm.bound,
            point_mass_limit: pm.position_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    /// Episodes `M`.
    pub episodes: u64,
    /// Checkpoint every this many episodes; 0 writes only the final one.
    pub checkpoint_interval: u64,
    pub out_dir: String,
    /// Trailing window of the reward curve.
    pub curve_window: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            episodes: 1000,
            checkpoint_interval: 100,
            out_dir: "runs/default".into(),
            curve_window: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub robot: RobotParams,
    pub env: EnvSettings,
    pub ddpg: DdpgConfig,
    pub run: RunSettings,
}

trait Value: Sized {
    fn render(&self) -> String;
    fn parse(s: &str) -> Result<Self, String>;
}

impl Value for f64 {
    fn render(&self) -> String {
        format!("{self:?}")
    }
    fn parse(s: &str) -> Result<Self, String> {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("expected a finite number, got '{s}'")),
        }
    }
}

impl Value for u64 {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got '{s}'"))
    }
}

impl Value for usize {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got '{s}'"))
    }
}

impl Value for bool {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected true or false, got '{s}'"))
    }
}

impl Value for String {
    fn render(&self) -> String {
        self.clone()
    }
    fn parse(s: &str) -> Result<Self, String> {
        Ok(s.to_string())
    }
}

impl Value for Vec<usize> {
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
    }
    fn parse(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| format!("expected comma-separated integers, got '{s}'")))
            .collect()
    }
}

impl Value for Task {
    fn render(&self) -> String {
        match self {
            Task::Biped => "biped".into(),
            Task::PointMass => "point_mass".into(),
        }
    }
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "biped" => Ok(Task::Biped),
            "point_mass" => Ok(Task::PointMass),
            _ => Err(format!("expected biped or point_mass, got '{s}'")),
        }
    }
}

struct Field {
    section: &'static str,
    key: &'static str,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str) -> Result<(), String>,
}

macro_rules! field {
    ($section:literal, $key:literal, $c:ident => $place:expr) => {
        Field {
            section: $section,
            key: $key,
            get: |$c: &RunConfig| Value::render(&$place),
            set: |$c: &mut RunConfig, v: &str| {
                $place = Value::parse(v)?;
                Ok(())
            },
        }
    };
}

pub const SECTIONS: [&str; 5] = ["robot", "env", "ddpg", "ou", "run"];

fn fields() -> Vec<Field> {
    vec![
        field!("robot", "waist_mass", c => c.robot.waist_mass),
        field!("robot", "thigh_mass", c => c.robot.thigh_mass),
        field!("robot", "shank_mass", c => c.robot.shank_mass),
        field!("robot", "waist_length", c => c.robot.waist_length),
        field!("robot", "thigh_length", c => c.robot.thigh_length),
        field!("robot", "shank_length", c => c.robot.shank_length),
        field!("robot", "hip_flexion_max", c => c.robot.limits.hip_flexion_max),
        field!("robot", "hip_extension_max", c => c.robot.limits.hip_extension_max),
        field!("robot", "knee_flexion_max", c => c.robot.limits.knee_flexion_max),
        field!("robot", "knee_extension_max", c => c.robot.limits.knee_extension_max),
        field!("robot", "gravity", c => c.robot.gravity),
        field!("robot", "contact_stiffness", c => c.robot.contact_stiffness),
        field!("robot", "contact_damping", c => c.robot.contact_damping),
        field!("robot", "friction_coefficient", c => c.robot.friction_coefficient),
        field!("robot", "friction_viscosity", c => c.robot.friction_viscosity),
        field!("robot", "fall_height_fraction", c => c.robot.fall_height_fraction),
        field!("env", "task", c => c.env.task),
        field!("env", "seed", c => c.env.seed),
        field!("env", "torque_limit", c => c.env.torque_limit),
        field!("env", "episode_cap", c => c.env.biped.episode_cap),
        field!("env", "physics_dt", c => c.env.biped.physics_dt),
        field!("env", "substeps", c => c.env.biped.substeps),
        field!("env", "init_noise", c => c.env.biped.init_noise),
        field!("env", "target_distance", c => c.env.biped.target_distance),
        field!("env", "normalize_observations", c => c.env.biped.normalize_observations),
        field!("env", "w_velocity", c => c.env.biped.reward.w_velocity),
        field!("env", "w_alive", c => c.env.biped.reward.w_alive),
        field!("env", "w_torque", c => c.env.biped.reward.w_torque),
        field!("env", "fall_penalty", c => c.env.biped.reward.fall_penalty),
        field!("env", "point_mass_horizon", c => c.env.point_mass_horizon),
        field!("env", "point_mass_effort", c => c.env.point_mass_effort),
        field!("env", "point_mass_bound", c => c.env.point_mass_bound),
        field!("env", "point_mass_limit", c => c.env.point_mass_limit),
        field!("ddpg", "gamma", c => c.ddpg.gamma),
        field!("ddpg", "tau", c => c.ddpg.tau),
        field!("ddpg", "batch_size", c => c.ddpg.batch_size),
        field!("ddpg", "buffer_capacity", c => c.ddpg.buffer_capacity),
        field!("ddpg", "warmup", c => c.ddpg.warmup),
        field!("ddpg", "actor_lr", c => c.ddpg.actor_lr),
        field!("ddpg", "critic_lr", c => c.ddpg.critic_lr),
        field!("ddpg", "actor_hidden", c => c.ddpg.actor_hidden),
        field!("ddpg", "critic_state_width", c => c.ddpg.critic_state_width),
        field!("ddpg", "critic_head_width", c => c.ddpg.critic_head_width),
        field!("ddpg", "batch_norm", c => c.ddpg.batch_norm),
        field!("ou", "theta", c => c.ddpg.ou.theta),
        field!("ou", "sigma", c => c.ddpg.ou.sigma),
        field!("ou", "mu", c => c.ddpg.ou.mu),
        field!("run", "episodes", c => c.run.episodes),
        field!("run", "checkpoint_interval", c => c.run.checkpoint_interval),
        field!("run", "out_dir", c => c.run.out_dir),
        field!("run", "curve_window", c => c.run.curve_window),
    ]
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

impl RunConfig {
    /// Parses and validates config text; omitted keys keep their defaults.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let table = fields();
        let mut config = RunConfig::default();
        let mut section: Option<String> = None;
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line: line_no,
                    message: "unterminated section header".into(),
                })?;
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::Syntax {
                        line: line_no,
                        message: format!("unknown section [{name}]"),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                message: "expected 'key = value'".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    message: "expected 'key = value'".into(),
                });
            }
            let (sec, name) = match key.split_once('.') {
                Some((s, k)) => (s.to_string(), k),
                None => match &section {
                    Some(s) => (s.clone(), key),
                    None => {
                        return Err(ConfigError::Syntax {
                            line: line_no,
                            message: format!("key '{key}' outside any section"),
                        })
                    }
                },
            };
            let full = format!("{sec}.{name}");
            let field = table
                .iter()
                .find(|f| f.section == sec && f.key == name)
                .ok_or_else(|| ConfigError::UnknownKey {
                    line: line_no,
                    key: full.clone(),
                })?;
            if !seen.insert(full.clone()) {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    message: format!("duplicate key '{full}'"),
                });
            }
            (field.set)(&mut config, value).map_err(|message| ConfigError::Invalid { key: full, message })?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, format!("must be positive, got {v}")))
            }
        };
        let non_negative = |key: &str, v: f64| {
            if v >= 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, format!("must be non-negative, got {v}")))
            }
        };
        let r = &self.robot;
        for (key, v) in [
            ("robot.waist_mass", r.waist_mass),
            ("robot.thigh_mass", r.thigh_mass),
            ("robot.shank_mass", r.shank_mass),
            ("robot.waist_length", r.waist_length),
            ("robot.thigh_length", r.thigh_length),
            ("robot.shank_length", r.shank_length),
            ("robot.contact_stiffness", r.contact_stiffness),
            ("env.torque_limit", self.env.torque_limit),
            ("env.physics_dt", self.env.biped.physics_dt),
            ("env.target_distance", self.env.biped.target_distance),
            ("env.point_mass_bound", self.env.point_mass_bound),
            ("env.point_mass_limit", self.env.point_mass_limit),
            ("ddpg.actor_lr", self.ddpg.actor_lr),
            ("ddpg.critic_lr", self.ddpg.critic_lr),
            ("ou.theta", self.ddpg.ou.theta),
        ] {
            positive(key, v)?;
        }
        for (key, v) in [
            ("robot.hip_flexion_max", r.limits.hip_flexion_max),
            ("robot.hip_extension_max", r.limits.hip_extension_max),
            ("robot.knee_flexion_max", r.limits.knee_flexion_max),
            ("robot.knee_extension_max", r.limits.knee_extension_max),
            ("robot.gravity", r.gravity),
            ("robot.contact_damping", r.contact_damping),
            ("robot.friction_coefficient", r.friction_coefficient),
            ("robot.friction_viscosity", r.friction_viscosity),
            ("env.init_noise", self.env.biped.init_noise),
            ("env.point_mass_effort", self.env.point_mass_effort),
            ("ou.sigma", self.ddpg.ou.sigma),
        ] {
            non_negative(key, v)?;
        }
        if !(r.fall_height_fraction > 0.0 && r.fall_height_fraction < 1.0) {
            return Err(ConfigError::invalid("robot.fall_height_fraction", "must lie in (0, 1)"));
        }
        if self.ddpg.ou.theta >= 2.0 {
            return Err(ConfigError::invalid("ou.theta", "must lie in (0, 2) for a stationary process"));
        }
        self.env.biped.reward.validate().map_err(|m| ConfigError::invalid("env reward weights", m))?;
        let d = &self.ddpg;
        if !(0.0..=1.0).contains(&d.gamma) {
            return Err(ConfigError::invalid("ddpg.gamma", format!("must lie in [0, 1], got {}", d.gamma)));
        }
        if !(d.tau > 0.0 && d.tau <= 1.0) {
            return Err(ConfigError::invalid("ddpg.tau", format!("must lie in (0, 1], got {}", d.tau)));
        }
        for (key, v) in [
            ("ddpg.batch_size", d.batch_size),
            ("ddpg.critic_state_width", d.critic_state_width),
            ("ddpg.critic_head_width", d.critic_head_width),
            ("env.episode_cap", self.env.biped.episode_cap),
            ("env.substeps", self.env.biped.substeps),
            ("env.point_mass_horizon", self.env.point_mass_horizon),
            ("run.curve_window", self.run.curve_window),
        ] {
            if v == 0 {
                return Err(ConfigError::invalid(key, "must be positive"));
            }
        }
        if d.batch_norm && d.batch_size < 2 {
            return Err(ConfigError::invalid("ddpg.batch_size", "batch normalization needs at least 2"));
        }
        if d.buffer_capacity < d.batch_size {
            return Err(ConfigError::invalid("ddpg.buffer_capacity", "must hold at least one batch"));
        }
        if d.actor_hidden.is_empty() || d.actor_hidden.contains(&0) {
            return Err(ConfigError::invalid("ddpg.actor_hidden", "needs one or more positive widths"));
        }
        if self.run.out_dir.is_empty() {
            return Err(ConfigError::invalid("run.out_dir", "must not be empty"));
        }
        self.robot_spec()
            .validate()
            .map_err(|e| ConfigError::invalid("robot", e.to_string()))
    }

    pub fn robot_spec(&self) -> RobotSpec {
        let r = &self.robot;
        RobotSpec {
            links: [
                LinkSpec::uniform_rod(LinkName::Waist, r.waist_mass, r.waist_length),
                LinkSpec::uniform_rod(LinkName::ThighR, r.thigh_mass, r.thigh_length),
                LinkSpec::uniform_rod(LinkName::ThighL, r.thigh_mass, r.thigh_length),
                LinkSpec::uniform_rod(LinkName::ShankR, r.shank_mass, r.shank_length),
                LinkSpec::uniform_rod(LinkName::ShankL, r.shank_mass, r.shank_length),
            ],
            limits: r.limits.clone(),
            gravity: r.gravity,
            contact_stiffness: r.contact_stiffness,
            contact_damping: r.contact_damping,
            friction_coefficient: r.friction_coefficient,
            friction_viscosity: r.friction_viscosity,
            torque_limit: self.env.torque_limit,
            fall_height_fraction: r.fall_height_fraction,
        }
    }

    pub fn biped_env(&self) -> BipedEnv {
        BipedEnv::new(self.robot_spec(), self.env.biped.clone())
    }

    pub fn point_mass_env(&self) -> PointMassEnv {
        let mut env = PointMassEnv::new(self.env.point_mass_horizon, self.env.point_mass_effort, self.env.point_mass_bound);
        env.position_limit = self.env.point_mass_limit;
        env
    }

    /// Point-mass task with learning settings that converge within a few
    /// hundred short episodes.
    pub fn point_mass_preset() -> RunConfig {
        let mut c = RunConfig::default();
        c.env.task = Task::PointMass;
        c.ddpg = DdpgConfig {
            gamma: 0.9,
            tau: 0.005,
            batch_size: 128,
            buffer_capacity: 100_000,
            warmup: 200,
            actor_lr: 5e-5,
            critic_lr: 1e-3,
            batch_norm: false,
            ou: OuParams {
                sigma: 0.15,
                ..OuParams::default()
            },
            ..DdpgConfig::default()
        };
        c.run.episodes = 300;
        c.run.checkpoint_interval = 100;
        c.run.curve_window = 20;
        c.run.out_dir = "runs/point_mass".into();
        c
    }

    /// Per-episode step cap for the configured task.
    pub fn episode_steps(&self) -> usize {
        match self.env.task {
            Task::Biped => self.env.biped.episode_cap,
            Task::PointMass => self.env.point_mass_horizon,
        }
    }

    pub fn seeds(&self) -> SeedPlan {
        SeedPlan::from_master(self.env.seed)
    }

    fn sections_text(&self, sections: &[&str]) -> String {
        let table = fields();
        let mut out = String::new();
        for sec in sections {
            let _ = writeln!(out, "[{sec}]");
            for f in table.iter().filter(|f| f.section == *sec) {
                let _ = writeln!(out, "{} = {}", f.key, (f.get)(self));
            }
            out.push('\n');
        }
        out
    }

    /// Every key with its effective value, plus the derived seed plan as a
    /// comment. Parsing the echo yields an identical config.
    pub fn echo(&self) -> String {
        let s = self.seeds();
        let mut out = String::from("# effective configuration\n");
        let _ = writeln!(
            out,
            "# seed plan (SplitMix64 of env.seed): env={} init={} noise={} sampling={}",
            s.env, s.init, s.noise, s.sampling
        );
        let _ = writeln!(out, "# fingerprint: {}\n", self.fingerprint_hex());
        out.push_str(&self.sections_text(&SECTIONS));
        out
    }

    /// SHA-256 over everything that shapes training; the `[run]` section
    /// (episode count, output location, reporting) is excluded so a run can be
    /// extended or moved without invalidating its checkpoints.
    pub fn fingerprint(&self) -> [u8; 32] {
        let text = self.sections_text(&SECTIONS[..4]);
        Sha256::digest(text.as_bytes()).into()
    }

    pub fn fingerprint_hex(&self) -> String {
        self.fingerprint().iter().map(|b| format!("{b:02x}")).collect()
    }
}
