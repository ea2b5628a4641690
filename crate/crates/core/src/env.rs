//! Episodic control tasks: the biped walker and a one-dimensional
//! point-mass regulator used as a fast learning benchmark.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{self, check_fall, DynamicsError, RobotSpec, RobotState};

pub const OBS_DIM: usize = 12;
pub const ACT_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode is finished; call reset before stepping")]
    EpisodeFinished,
    #[error("expected an action of length {expected}, got {got}")]
    ActionShape { expected: usize, got: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// One control step of any environment, in the flat form the agent consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// The episode is over (terminal or truncated).
    pub done: bool,
    /// The next state has no future value: bootstrapping stops here.
    /// Running out of the step budget ends an episode without being terminal.
    pub terminal: bool,
    pub distance: f64,
    pub fell: bool,
}

pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    /// Symmetric per-dimension action bound.
    fn action_bound(&self) -> f64;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<EnvStep, EnvError>;
}

/// Raw sensor vector, fixed order:
/// hipR, hipL, hipR', hipL', kneeR, kneeL, kneeR', kneeL', ẏ, ż, contactR, contactL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub const HIP_ANGLES: usize = 0;
    pub const HIP_RATES: usize = 2;
    pub const KNEE_ANGLES: usize = 4;
    pub const KNEE_RATES: usize = 6;
    pub const WAIST_VEL: usize = 8;
    pub const CONTACTS: usize = 10;

    /// Angles / π, joint rates / 10 rad/s, waist velocity / 2 m/s, contacts raw.
    pub fn normalized(&self) -> [f64; OBS_DIM] {
        let mut out = self.0;
        for (i, v) in out.iter_mut().enumerate() {
            *v /= match i {
                0 | 1 | 4 | 5 => std::f64::consts::PI,
                2 | 3 | 6 | 7 => 10.0,
                8 | 9 => 2.0,
                _ => 1.0,
            };
        }
        out
    }
}

pub fn observation_of(state: &RobotState) -> Observation {
    let a = &state.joint_angles;
    let w = &state.joint_vels;
    let contact = |c: bool| if c { 1.0 } else { 0.0 };
    Observation([
        a[0],
        a[1],
        w[0],
        w[1],
        a[2],
        a[3],
        w[2],
        w[3],
        state.waist_vel[0],
        state.waist_vel[1],
        contact(state.foot_contact[0]),
        contact(state.foot_contact[1]),
    ])
}

/// Joint torques (hipR, hipL, kneeR, kneeL), N·m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action(pub [f64; ACT_DIM]);

impl Action {
    pub fn clamped(&self, limit: f64) -> Action {
        Action(self.0.map(|t| t.clamp(-limit, limit)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardWeights {
    pub w_velocity: f64,
    pub w_alive: f64,
    pub w_torque: f64,
    pub fall_penalty: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_velocity: 1.0,
            w_alive: 0.05,
            w_torque: 1e-4,
            fall_penalty: 10.0,
        }
    }
}

impl RewardWeights {
    /// Forward progress plus an alive bonus, minus torque effort and a fall penalty.
    ///
    /// Forward speed is the waist displacement over the elapsed time, falling
    /// back to the instantaneous velocity when no time has passed.
    pub fn reward(&self, before: &RobotState, after: &RobotState, action: &Action, fell: bool) -> f64 {
        let elapsed = after.sim_time - before.sim_time;
        let speed = if elapsed > 0.0 {
            (after.waist_pos[0] - before.waist_pos[0]) / elapsed
        } else {
            after.waist_vel[0]
        };
        let effort: f64 = action.0.iter().map(|t| t * t).sum();
        let penalty = if fell { self.fall_penalty } else { 0.0 };
        self.w_velocity * speed + self.w_alive - self.w_torque * effort - penalty
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("w_velocity", self.w_velocity),
            ("w_alive", self.w_alive),
            ("w_torque", self.w_torque),
            ("fall_penalty", self.fall_penalty),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a finite non-negative number"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub reward: RewardWeights,
    /// Control steps per episode.
    pub episode_cap: usize,
    pub physics_dt: f64,
    /// Physics steps per control step; 20 × 1 ms gives 50 Hz control.
    pub substeps: usize,
    /// Half-width of the uniform joint-angle perturbation at reset, rad.
    pub init_noise: f64,
    pub target_distance: f64,
    pub normalize_observations: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            reward: RewardWeights::default(),
            episode_cap: 1000,
            physics_dt: 1e-3,
            substeps: 20,
            init_noise: 0.05,
            target_distance: 10.0,
            normalize_observations: true,
        }
    }
}

impl EnvConfig {
    pub fn control_period(&self) -> f64 {
        self.physics_dt * self.substeps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Waist displacement along +y since reset, m.
    pub distance: f64,
    pub fell: bool,
    pub diverged: bool,
    pub sim_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
    /// Torques actually applied after clamping.
    pub applied: Action,
}

#[derive(Debug, Clone)]
pub struct BipedEnv {
    pub spec: RobotSpec,
    pub config: EnvConfig,
    state: RobotState,
    start_y: f64,
    steps: usize,
    done: bool,
}

impl BipedEnv {
    pub fn new(spec: RobotSpec, config: EnvConfig) -> Self {
        let state = RobotState::standing(&spec);
        BipedEnv {
            start_y: state.waist_pos[0],
            spec,
            config,
            state,
            steps: 0,
            done: false,
        }
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Standing pose with each joint perturbed uniformly within
    /// `±init_noise`, lowered so the lower foot carries the static
    /// contact deflection.
    pub fn reset_state(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = RobotState::standing(&self.spec);
        let noise = self.config.init_noise;
        for j in 0..4 {
            let delta = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
            let (lo, hi) = self.spec.limits.range(j);
            state.joint_angles[j] = (state.joint_angles[j] + delta).clamp(lo, hi);
        }
        state.waist_pos[1] = 0.0;
        let lowest = dynamics::forward_kinematics(&self.spec, &state)
            .feet
            .iter()
            .map(|f| f[1])
            .fold(f64::INFINITY, f64::min);
        let sag = self.spec.total_mass() * self.spec.gravity / (2.0 * self.spec.contact_stiffness);
        state.waist_pos[1] = -lowest - sag;
        state.refresh_contacts(&self.spec);
        self.start_y = state.waist_pos[0];
        self.state = state;
        self.steps = 0;
        self.done = false;
        observation_of(&self.state)
    }

    /// Holds the clamped torques for one control period.
    pub fn step_action(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let applied = action.clamped(self.spec.torque_limit);
        let before = self.state.clone();
        let mut state = before.clone();
        let mut diverged = false;
        for _ in 0..self.config.substeps {
            match dynamics::step(&self.spec, &state, applied.0, self.config.physics_dt) {
                Ok(next) => state = next,
                Err(DynamicsError::Diverged { .. }) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        if diverged {
            // Keep the last finite state; advance the clock so time stays uniform.
            state = before.clone();
            state.sim_time = before.sim_time + self.config.control_period();
        }
        self.steps += 1;
        let fell = diverged || check_fall(&self.spec, &state);
        let reward = if diverged {
            self.config.reward.w_alive - self.config.reward.fall_penalty
        } else {
            self.config.reward.reward(&before, &state, &applied, fell)
        };
        let distance = state.waist_pos[0] - self.start_y;
        self.done = fell || distance >= self.config.target_distance || self.steps >= self.config.episode_cap;
        self.state = state;
        Ok(StepResult {
            observation: observation_of(&self.state),
            reward,
            done: self.done,
            info: StepInfo {
                distance,
                fell,
                diverged,
                sim_time: self.state.sim_time,
            },
            applied,
        })
    }

    fn agent_view(&self, obs: &Observation) -> Vec<f64> {
        if self.config.normalize_observations {
            obs.normalized().to_vec()
        } else {
            obs.0.to_vec()
        }
    }
}

impl Environment for BipedEnv {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn act_dim(&self) -> usize {
        ACT_DIM
    }

    fn action_bound(&self) -> f64 {
        self.spec.torque_limit
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let obs = self.reset_state(seed);
        self.agent_view(&obs)
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep, EnvError> {
        let torques: [f64; ACT_DIM] = action.try_into().map_err(|_| EnvError::ActionShape {
            expected: ACT_DIM,
            got: action.len(),
        })?;
        let result = self.step_action(&Action(torques))?;
        Ok(EnvStep {
            observation: self.agent_view(&result.observation),
            reward: result.reward,
            done: result.done,
            terminal: result.info.fell || result.info.distance >= self.config.target_distance,
            distance: result.info.distance,
            fell: result.info.fell,
        })
    }
}

/// Overdamped point mass on a line: `x ← x + a`, reward `-(x² + effort·a²)`,
/// start `x ~ U[-1, 1]`, fixed horizon. The optimal controller is linear and
/// follows from a scalar Riccati recursion, which makes this a quick,
/// exactly-scored check that the agent learns.
///
/// Walls at `±position_limit` stop runaway exploration. Optimal paths from
/// the start interval never reach them, so the optimum is unchanged.
#[derive(Debug, Clone)]
pub struct PointMassEnv {
    pub horizon: usize,
    pub effort_weight: f64,
    pub bound: f64,
    pub position_limit: f64,
    x: f64,
    t: usize,
}

impl Default for PointMassEnv {
    fn default() -> Self {
        PointMassEnv::new(20, 0.1, 2.0)
    }
}

impl PointMassEnv {
    pub fn new(horizon: usize, effort_weight: f64, bound: f64) -> Self {
        PointMassEnv {
            horizon,
            effort_weight,
            bound,
            position_limit: 2.0,
            x: 0.0,
            t: 0,
        }
    }

    pub fn position(&self) -> f64 {
        self.x
    }

    /// Initial position drawn by `reset(seed)`.
    pub fn initial_position(seed: u64) -> f64 {
        ChaCha8Rng::seed_from_u64(seed).random_range(-1.0..=1.0)
    }
}

impl Environment for PointMassEnv {
    fn obs_dim(&self) -> usize {
        1
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> f64 {
        self.bound
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.x = Self::initial_position(seed);
        self.t = 0;
        vec![self.x]
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep, EnvError> {
        if self.t >= self.horizon {
            return Err(EnvError::EpisodeFinished);
        }
        let &[a] = action else {
            return Err(EnvError::ActionShape {
                expected: 1,
                got: action.len(),
            });
        };
        let a = a.clamp(-self.bound, self.bound);
        let reward = -(self.x * self.x + self.effort_weight * a * a);
        self.x = (self.x + a).clamp(-self.position_limit, self.position_limit);
        self.t += 1;
        Ok(EnvStep {
            observation: vec![self.x],
            reward,
            done: self.t >= self.horizon,
            // Time is not observed, so the horizon truncates rather than terminates.
            terminal: false,
            distance: 0.0,
            fell: false,
        })
    }
}
