//! Browser bindings: a passive biped drop, Ornstein-Uhlenbeck sample paths
//! and the gait analyzer on a constructed walking trace.

use bwr_core::ddpg::{OuNoise, OuParams};
use bwr_core::dynamics::{self, build_default_robot, contact_forces, forward_kinematics, RobotSpec, RobotState};
use bwr_core::gait;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

const DT: f64 = 1e-3;

/// Zero-torque biped released above the ground.
#[wasm_bindgen]
pub struct DropDemo {
    spec: RobotSpec,
    state: RobotState,
}

#[wasm_bindgen]
impl DropDemo {
    /// `height` is the clearance of the lower foot, m; `splay` the hip
    /// angle of each leg, rad (right forward, left back); `knee` the knee
    /// flexion, rad.
    #[wasm_bindgen(constructor)]
    pub fn new(height: f64, splay: f64, knee: f64, contact_stiffness: f64, gravity: f64) -> Result<DropDemo, String> {
        let mut spec = build_default_robot();
        spec.contact_stiffness = contact_stiffness;
        spec.gravity = gravity;
        spec.validate().map_err(|e| e.to_string())?;
        if !(height.is_finite() && height >= 0.0) {
            return Err("height must be non-negative".into());
        }
        let mut state = RobotState {
            waist_pos: [0.0, 1.0],
            waist_vel: [0.0; 2],
            joint_angles: [splay, -splay, knee, knee],
            joint_vels: [0.0; 4],
            foot_contact: [false; 2],
            sim_time: 0.0,
        };
        let lowest = forward_kinematics(&spec, &state).feet.iter().map(|f| f[1]).fold(f64::INFINITY, f64::min);
        state.waist_pos[1] += height - lowest;
        state.refresh_contacts(&spec);
        Ok(DropDemo { spec, state })
    }

    /// Advances simulated time by `seconds` in 1 ms steps.
    pub fn advance(&mut self, seconds: f64) -> Result<(), String> {
        let steps = (seconds / DT).round().max(0.0) as usize;
        for _ in 0..steps {
            self.state = dynamics::step(&self.spec, &self.state, [0.0; 4], DT).map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    /// Link segments as `[x0, z0, x1, z1]` for waist, thighs, shanks.
    pub fn segments(&self) -> Vec<f64> {
        forward_kinematics(&self.spec, &self.state)
            .links
            .iter()
            .flat_map(|l| [l.proximal[0], l.proximal[1], l.distal[0], l.distal[1]])
            .collect()
    }

    pub fn time(&self) -> f64 {
        self.state.sim_time
    }

    pub fn waist_height(&self) -> f64 {
        self.state.waist_pos[1]
    }

    /// Kinetic plus gravitational energy, J.
    pub fn energy(&self) -> f64 {
        dynamics::total_energy(&self.spec, &self.state)
    }

    /// Total ground normal force, N.
    pub fn normal_force(&self) -> f64 {
        contact_forces(&self.spec, &self.state).iter().map(|f| f.normal).sum()
    }

    /// Weight of the robot, N; the normal force settles here.
    pub fn weight(&self) -> f64 {
        self.spec.total_mass() * self.spec.gravity
    }
}

/// One-dimensional OU path of `steps` unit steps from the mean.
#[wasm_bindgen]
pub fn ou_path(theta: f64, sigma: f64, mu: f64, steps: usize, seed: u64) -> Vec<f64> {
    let mut noise = OuNoise::new(OuParams { mu, theta, sigma }, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps).map(|_| noise.sample(&mut rng)[0]).collect()
}

/// Stationary standard deviation `σ / √(2θ − θ²)`; NaN outside `0 < θ < 2`.
#[wasm_bindgen]
pub fn ou_stationary_std(theta: f64, sigma: f64) -> f64 {
    if theta > 0.0 && theta < 2.0 {
        OuParams { mu: 0.0, theta, sigma }.stationary_std()
    } else {
        f64::NAN
    }
}

fn walking_trace(hip_hz: f64, seconds: f64, speed: f64) -> Result<gait::GaitTrace, String> {
    if !(hip_hz > 0.0 && seconds > 0.0 && hip_hz < 25.0) {
        return Err("hip frequency must lie in (0, 25) Hz and duration be positive".into());
    }
    Ok(gait::synthetic_gait(hip_hz, seconds, 50.0, speed))
}

/// Gait report of a constructed trace (antiphase hips, knees at twice the
/// hip frequency), sampled at 50 Hz.
#[wasm_bindgen]
pub fn gait_report(hip_hz: f64, seconds: f64, speed: f64) -> Result<String, String> {
    let trace = walking_trace(hip_hz, seconds, speed)?;
    gait::analyze(&trace).map(|r| r.to_string()).map_err(|e| e.to_string())
}

/// SVG of the constructed trace's hips (`knees = false`) or knees.
#[wasm_bindgen]
pub fn gait_svg(hip_hz: f64, seconds: f64, speed: f64, knees: bool) -> Result<String, String> {
    let trace = walking_trace(hip_hz, seconds, speed)?;
    Ok(if knees {
        gait::joint_svg(&trace, [2, 3], "Knee joint angles")
    } else {
        gait::joint_svg(&trace, [0, 1], "Hip joint angles")
    })
}
