//! Physical sanity checks for a robot configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{
    self, contact_forces, mass_matrix, total_energy, CoordLocks, DynamicsError, LinkName,
    RobotSpec, RobotState,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub measured: f64,
    pub expected: f64,
    /// Allowed deviation, in the units described by `detail`.
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {}: measured {:.6e}, expected {:.6e}, tolerance {:.1e} ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.expected,
            self.tolerance,
            self.detail
        )
    }
}

pub const DT: f64 = 1e-3;

/// Legs mid-range and moving, waist high above the ground and drifting forward.
pub fn airborne_state() -> RobotState {
    RobotState {
        waist_pos: [0.0, 10.0],
        waist_vel: [1.0, 0.0],
        joint_angles: [0.5, -0.3, 1.0, 0.6],
        joint_vels: [0.3, -0.2, 0.4, -0.1],
        foot_contact: [false; 2],
        sim_time: 0.0,
    }
}

/// Largest relative energy deviation along a zero-torque airborne rollout.
pub fn airborne_energy_drift(spec: &RobotSpec, steps: usize) -> Result<f64, DynamicsError> {
    let mut state = airborne_state();
    let e0 = total_energy(spec, &state);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        state = dynamics::step(spec, &state, [0.0; 4], DT)?;
        worst = worst.max((total_energy(spec, &state) - e0).abs());
    }
    Ok(worst / e0.abs())
}

pub fn check_energy_drift(spec: &RobotSpec) -> CheckOutcome {
    let tolerance = 1e-3;
    let (measured, detail) = match airborne_energy_drift(spec, 1000) {
        Ok(d) => (d, "max |E - E0| / |E0| over 1 s airborne, dt = 1 ms".to_string()),
        Err(e) => (f64::INFINITY, e.to_string()),
    };
    CheckOutcome {
        name: "energy-drift",
        measured,
        expected: 0.0,
        tolerance,
        passed: measured < tolerance,
        detail,
    }
}

/// Uniform random configuration within the joint limits.
pub fn random_state(spec: &RobotSpec, rng: &mut impl Rng) -> RobotState {
    let mut angles = [0.0; 4];
    for (j, a) in angles.iter_mut().enumerate() {
        let (lo, hi) = spec.limits.range(j);
        *a = rng.random_range(lo..=hi);
    }
    let mut vels = [0.0; 4];
    for v in vels.iter_mut() {
        *v = rng.random_range(-5.0..=5.0);
    }
    RobotState {
        waist_pos: [rng.random_range(-5.0..=5.0), rng.random_range(0.0..=2.0)],
        waist_vel: [rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0)],
        joint_angles: angles,
        joint_vels: vels,
        foot_contact: [false; 2],
        sim_time: 0.0,
    }
}

/// Worst asymmetry over `samples` random states, or infinity when any
/// Cholesky factorization fails.
pub fn mass_matrix_asymmetry(spec: &RobotSpec, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let m = mass_matrix(spec, &random_state(spec, &mut rng));
        worst = worst.max((m - m.transpose()).amax());
        if m.cholesky().is_none() {
            return f64::INFINITY;
        }
    }
    worst
}

pub fn check_mass_matrix(spec: &RobotSpec) -> CheckOutcome {
    let tolerance = 1e-10;
    let measured = mass_matrix_asymmetry(spec, 1000, 0x5eed);
    CheckOutcome {
        name: "mass-matrix",
        measured,
        expected: 0.0,
        tolerance,
        passed: measured <= tolerance,
        detail: "max |M - Mᵀ| over 1000 random states; infinite if Cholesky fails".into(),
    }
}

/// Straight-legged stance left to settle under zero torque; returns the
/// final total normal force.
pub fn settled_stance_force(spec: &RobotSpec, seconds: f64) -> Result<f64, DynamicsError> {
    let mut state = RobotState::standing(spec);
    // Start slightly high so the settle includes an impact.
    state.waist_pos[1] += 1e-3;
    let steps = (seconds / DT).round() as usize;
    for _ in 0..steps {
        state = dynamics::step(spec, &state, [0.0; 4], DT)?;
    }
    Ok(contact_forces(spec, &state).iter().map(|f| f.normal).sum())
}

pub fn check_static_stance(spec: &RobotSpec) -> CheckOutcome {
    let expected = spec.total_mass() * spec.gravity;
    let tolerance = 0.02;
    let (measured, detail) = match settled_stance_force(spec, 2.0) {
        Ok(f) => (f, "total normal force after 2 s settle; tolerance is relative".to_string()),
        Err(e) => (f64::NAN, e.to_string()),
    };
    let passed = if expected == 0.0 {
        measured.abs() < 1e-9
    } else {
        ((measured - expected) / expected).abs() <= tolerance
    };
    CheckOutcome {
        name: "static-stance",
        measured,
        expected,
        tolerance,
        passed,
        detail,
    }
}

/// Small-angle period of the right leg, knee locked straight, swinging
/// about a fixed hip: `2π √(I_pivot / (m g d))`.
pub fn compound_pendulum_period(spec: &RobotSpec) -> f64 {
    let thigh = spec.link(LinkName::ThighR);
    let shank = spec.link(LinkName::ShankR);
    let m = thigh.mass + shank.mass;
    let shank_com = thigh.length + shank.com_offset;
    let d = (thigh.mass * thigh.com_offset + shank.mass * shank_com) / m;
    let pivot_inertia = thigh.inertia
        + thigh.mass * thigh.com_offset.powi(2)
        + shank.inertia
        + shank.mass * shank_com.powi(2);
    2.0 * std::f64::consts::PI * (pivot_inertia / (m * spec.gravity * d)).sqrt()
}

/// Simulated period of the pinned right leg released from `amplitude` rad,
/// averaged over the downward zero crossings.
pub fn simulated_pendulum_period(spec: &RobotSpec, amplitude: f64, seconds: f64) -> Result<f64, DynamicsError> {
    let locks = CoordLocks([true, true, false, true, true, true]);
    let mut state = RobotState {
        waist_pos: [0.0, 2.0],
        waist_vel: [0.0; 2],
        joint_angles: [amplitude, 0.0, 0.0, 0.0],
        joint_vels: [0.0; 4],
        foot_contact: [false; 2],
        sim_time: 0.0,
    };
    let mut crossings = Vec::new();
    let steps = (seconds / DT).round() as usize;
    for _ in 0..steps {
        let next = dynamics::step_with_locks(spec, &state, [0.0; 4], DT, locks)?;
        let (a0, a1) = (state.joint_angles[0], next.joint_angles[0]);
        if a0 > 0.0 && a1 <= 0.0 {
            let frac = a0 / (a0 - a1);
            crossings.push(state.sim_time + frac * DT);
        }
        state = next;
    }
    if crossings.len() < 2 {
        return Ok(f64::NAN);
    }
    Ok((crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64)
}

pub fn check_pendulum(spec: &RobotSpec) -> CheckOutcome {
    let expected = compound_pendulum_period(spec);
    let tolerance = 0.01;
    let amplitude = 5f64.to_radians();
    let (measured, detail) = match simulated_pendulum_period(spec, amplitude, 6.0 * expected.max(0.1)) {
        Ok(p) => (p, "pinned-hip leg from 5°; tolerance is relative".to_string()),
        Err(e) => (f64::NAN, e.to_string()),
    };
    CheckOutcome {
        name: "pendulum-period",
        measured,
        expected,
        tolerance,
        passed: ((measured - expected) / expected).abs() <= tolerance,
        detail,
    }
}

/// Vertical waist acceleration over one airborne zero-torque step.
pub fn check_drop(spec: &RobotSpec) -> CheckOutcome {
    let start = RobotState {
        joint_vels: [0.0; 4],
        waist_vel: [0.0; 2],
        ..airborne_state()
    };
    let (measured, detail) = match dynamics::step(spec, &start, [0.0; 4], DT) {
        Ok(next) => (
            (next.waist_vel[1] - start.waist_vel[1]) / DT,
            "waist z acceleration of an airborne drop, m/s²".to_string(),
        ),
        Err(e) => (f64::NAN, e.to_string()),
    };
    let expected = -spec.gravity;
    let tolerance = 1e-9 * (1.0 + spec.gravity);
    CheckOutcome {
        name: "free-drop",
        measured,
        expected,
        tolerance,
        passed: (measured - expected).abs() <= tolerance,
        detail,
    }
}

pub fn run_all(spec: &RobotSpec) -> Vec<CheckOutcome> {
    let mut out = vec![check_drop(spec), check_mass_matrix(spec), check_energy_drift(spec)];
    if spec.gravity > 0.0 {
        out.push(check_static_stance(spec));
        out.push(check_pendulum(spec));
    }
    out
}
