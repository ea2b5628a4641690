//! Planar five-link biped held in the sagittal plane by a boom.
//!
//! The waist translates freely in `(y, z)` but cannot pitch, so the
//! generalized coordinates are `q = (y, z, hipR, hipL, kneeR, kneeL)`.
//! Angles are measured from the downward vertical: a positive hip angle
//! swings the thigh forward (+y), a positive knee angle folds the shank
//! backward relative to the thigh. The hip joints sit at the waist position.

use nalgebra::{Matrix6, Vector2, Vector6};
use thiserror::Error;

pub const DOF: usize = 6;
pub const NUM_JOINTS: usize = 4;

pub type Coords = Vector6<f64>;

const MAX_CONTACT_ITERS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid robot spec: {0}")]
    InvalidSpec(String),
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("mass matrix is not positive definite")]
    SingularMassMatrix,
    #[error("simulation diverged at t = {time} s")]
    Diverged { time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkName {
    Waist,
    ThighR,
    ThighL,
    ShankR,
    ShankL,
}

impl LinkName {
    pub const ALL: [LinkName; 5] = [
        LinkName::Waist,
        LinkName::ThighR,
        LinkName::ThighL,
        LinkName::ShankR,
        LinkName::ShankL,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkName::Waist => "waist",
            LinkName::ThighR => "thighR",
            LinkName::ThighL => "thighL",
            LinkName::ShankR => "shankR",
            LinkName::ShankL => "shankL",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub name: LinkName,
    /// kg
    pub mass: f64,
    /// m
    pub length: f64,
    /// Distance of the centre of mass from the proximal joint, m.
    pub com_offset: f64,
    /// Moment of inertia about the centre of mass, kg·m².
    pub inertia: f64,
}

impl LinkSpec {
    /// A uniform rod: COM at mid-length, `I = m l² / 12`.
    pub fn uniform_rod(name: LinkName, mass: f64, length: f64) -> Self {
        LinkSpec {
            name,
            mass,
            length,
            com_offset: 0.5 * length,
            inertia: mass * length * length / 12.0,
        }
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        let ok = self.mass > 0.0
            && self.length > 0.0
            && self.inertia > 0.0
            && self.com_offset >= 0.0
            && self.com_offset <= self.length
            && [self.mass, self.length, self.inertia, self.com_offset]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(DynamicsError::InvalidSpec(format!(
                "link {} needs mass, length, inertia > 0 and 0 <= com_offset <= length",
                self.name.as_str()
            )))
        }
    }
}

/// Sagittal-plane bending limits, all given as non-negative magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLimits {
    pub hip_flexion_max: f64,
    pub hip_extension_max: f64,
    pub knee_flexion_max: f64,
    pub knee_extension_max: f64,
}

impl JointLimits {
    /// `(lower, upper)` bounds of joint `j` in joint order (hipR, hipL, kneeR, kneeL).
    pub fn range(&self, joint: usize) -> (f64, f64) {
        if joint < 2 {
            (-self.hip_extension_max, self.hip_flexion_max)
        } else {
            (-self.knee_extension_max, self.knee_flexion_max)
        }
    }

    pub fn contains(&self, joint: usize, angle: f64) -> bool {
        let (lo, hi) = self.range(joint);
        angle >= lo && angle <= hi
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        let pairs = [
            ("hip", self.hip_flexion_max, self.hip_extension_max),
            ("knee", self.knee_flexion_max, self.knee_extension_max),
        ];
        for (joint, flex, ext) in pairs {
            if !(flex >= 0.0 && ext >= 0.0 && flex + ext > 0.0 && (flex + ext).is_finite()) {
                return Err(DynamicsError::InvalidSpec(format!(
                    "{joint} limits must be non-negative with a non-empty range"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotSpec {
    /// Waist, thighR, thighL, shankR, shankL in that order.
    pub links: [LinkSpec; 5],
    pub limits: JointLimits,
    /// Magnitude of gravitational acceleration (acts along -z), m/s².
    pub gravity: f64,
    /// N/m
    pub contact_stiffness: f64,
    /// N·s/m
    pub contact_damping: f64,
    pub friction_coefficient: f64,
    /// Tangential viscous regularization below the Coulomb cap, N·s/m.
    pub friction_viscosity: f64,
    /// Per-joint torque bound, N·m.
    pub torque_limit: f64,
    /// The robot has fallen once the waist drops below this fraction of the
    /// standing waist height.
    pub fall_height_fraction: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        build_default_robot()
    }
}

/// Masses and bending limits of the reference walker; lengths are
/// anthropomorphic defaults (0.22 m thigh and shank, 0.10 m waist block).
#[allow(clippy::approx_constant)]
pub fn build_default_robot() -> RobotSpec {
    let thigh = 0.22;
    let shank = 0.22;
    RobotSpec {
        links: [
            LinkSpec::uniform_rod(LinkName::Waist, 0.36416, 0.10),
            LinkSpec::uniform_rod(LinkName::ThighR, 0.045155, thigh),
            LinkSpec::uniform_rod(LinkName::ThighL, 0.045155, thigh),
            LinkSpec::uniform_rod(LinkName::ShankR, 0.069508, shank),
            LinkSpec::uniform_rod(LinkName::ShankL, 0.069508, shank),
        ],
        limits: JointLimits {
            hip_flexion_max: 2.26893,
            hip_extension_max: 0.523599,
            knee_flexion_max: 2.26893,
            knee_extension_max: 0.261799,
        },
        gravity: 9.81,
        contact_stiffness: 1.0e4,
        contact_damping: 100.0,
        friction_coefficient: 1.0,
        friction_viscosity: 100.0,
        torque_limit: 3.0,
        fall_height_fraction: 0.6,
    }
}

impl RobotSpec {
    pub fn link(&self, name: LinkName) -> &LinkSpec {
        &self.links[name as usize]
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    fn thigh(&self, side: usize) -> &LinkSpec {
        &self.links[1 + side]
    }

    fn shank(&self, side: usize) -> &LinkSpec {
        &self.links[3 + side]
    }

    /// Hip height with both legs straight and feet touching the ground.
    pub fn standing_height(&self) -> f64 {
        let right = self.thigh(0).length + self.shank(0).length;
        let left = self.thigh(1).length + self.shank(1).length;
        right.max(left)
    }

    pub fn fall_threshold(&self) -> f64 {
        self.fall_height_fraction * self.standing_height()
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        for (i, link) in self.links.iter().enumerate() {
            if link.name != LinkName::ALL[i] {
                return Err(DynamicsError::InvalidSpec(format!(
                    "link {i} must be {}",
                    LinkName::ALL[i].as_str()
                )));
            }
            link.validate()?;
        }
        self.limits.validate()?;
        let checks = [
            ("gravity", self.gravity >= 0.0),
            ("contact_stiffness", self.contact_stiffness > 0.0),
            ("contact_damping", self.contact_damping >= 0.0),
            ("friction_coefficient", self.friction_coefficient >= 0.0),
            ("friction_viscosity", self.friction_viscosity >= 0.0),
            ("torque_limit", self.torque_limit > 0.0),
            (
                "fall_height_fraction",
                self.fall_height_fraction > 0.0 && self.fall_height_fraction < 1.0,
            ),
        ];
        let values = [
            self.gravity,
            self.contact_stiffness,
            self.contact_damping,
            self.friction_coefficient,
            self.friction_viscosity,
            self.torque_limit,
            self.fall_height_fraction,
        ];
        for ((name, ok), value) in checks.into_iter().zip(values) {
            if !ok || !value.is_finite() {
                return Err(DynamicsError::InvalidSpec(format!(
                    "{name} out of range: {value}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    /// Hip joint position `(y, z)`, m.
    pub waist_pos: [f64; 2],
    pub waist_vel: [f64; 2],
    /// hipR, hipL, kneeR, kneeL
    pub joint_angles: [f64; 4],
    pub joint_vels: [f64; 4],
    /// Right, left.
    pub foot_contact: [bool; 2],
    pub sim_time: f64,
}

impl RobotState {
    pub fn from_coords(q: &Coords, v: &Coords, sim_time: f64) -> Self {
        RobotState {
            waist_pos: [q[0], q[1]],
            waist_vel: [v[0], v[1]],
            joint_angles: [q[2], q[3], q[4], q[5]],
            joint_vels: [v[2], v[3], v[4], v[5]],
            foot_contact: [false; 2],
            sim_time,
        }
    }

    pub fn q(&self) -> Coords {
        Coords::new(
            self.waist_pos[0],
            self.waist_pos[1],
            self.joint_angles[0],
            self.joint_angles[1],
            self.joint_angles[2],
            self.joint_angles[3],
        )
    }

    pub fn v(&self) -> Coords {
        Coords::new(
            self.waist_vel[0],
            self.waist_vel[1],
            self.joint_vels[0],
            self.joint_vels[1],
            self.joint_vels[2],
            self.joint_vels[3],
        )
    }

    /// Straight legs with both feet pressed in by the static contact
    /// deflection, at rest.
    pub fn standing(spec: &RobotSpec) -> Self {
        let sag = spec.total_mass() * spec.gravity / (2.0 * spec.contact_stiffness);
        let mut state = RobotState {
            waist_pos: [0.0, spec.standing_height() - sag],
            waist_vel: [0.0; 2],
            joint_angles: [0.0; 4],
            joint_vels: [0.0; 4],
            foot_contact: [false; 2],
            sim_time: 0.0,
        };
        state.refresh_contacts(spec);
        state
    }

    pub fn is_finite(&self) -> bool {
        self.waist_pos
            .iter()
            .chain(&self.waist_vel)
            .chain(&self.joint_angles)
            .chain(&self.joint_vels)
            .all(|v| v.is_finite())
            && self.sim_time.is_finite()
    }

    /// Recomputes `foot_contact` from the current penetration and velocity.
    pub fn refresh_contacts(&mut self, spec: &RobotSpec) {
        let forces = contact_forces(spec, self);
        self.foot_contact = [forces[0].normal > 0.0, forces[1].normal > 0.0];
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPose {
    pub proximal: Vector2<f64>,
    pub distal: Vector2<f64>,
    pub com: Vector2<f64>,
    /// Absolute orientation measured from the downward vertical.
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    pub links: [LinkPose; 5],
    /// Distal shank ends (right, left).
    pub feet: [Vector2<f64>; 2],
}

/// Unit vector of a segment hanging at `angle` from the downward vertical.
fn axis(angle: f64) -> Vector2<f64> {
    Vector2::new(angle.sin(), -angle.cos())
}

/// Derivative of `axis` with respect to the angle.
fn axis_tangent(angle: f64) -> Vector2<f64> {
    Vector2::new(angle.cos(), angle.sin())
}

pub fn forward_kinematics(spec: &RobotSpec, state: &RobotState) -> Kinematics {
    let hip = Vector2::new(state.waist_pos[0], state.waist_pos[1]);
    let waist = spec.link(LinkName::Waist);
    let up = Vector2::new(0.0, 1.0);
    let mut links = [LinkPose {
        proximal: hip,
        distal: hip + up * waist.length,
        com: hip + up * waist.com_offset,
        angle: std::f64::consts::PI,
    }; 5];
    let mut feet = [hip; 2];
    for side in 0..2 {
        let thigh = spec.thigh(side);
        let shank = spec.shank(side);
        let thigh_angle = state.joint_angles[side];
        let shank_angle = thigh_angle - state.joint_angles[2 + side];
        let knee = hip + axis(thigh_angle) * thigh.length;
        let foot = knee + axis(shank_angle) * shank.length;
        links[1 + side] = LinkPose {
            proximal: hip,
            distal: knee,
            com: hip + axis(thigh_angle) * thigh.com_offset,
            angle: thigh_angle,
        };
        links[3 + side] = LinkPose {
            proximal: knee,
            distal: foot,
            com: knee + axis(shank_angle) * shank.com_offset,
            angle: shank_angle,
        };
        feet[side] = foot;
    }
    Kinematics { links, feet }
}

/// Point Jacobian (rows y, z) and the velocity-product term `J̇·v`.
#[derive(Debug, Clone, Copy)]
struct PointJacobian {
    rows: [Coords; 2],
    bias: Vector2<f64>,
}

impl PointJacobian {
    fn apply(&self, v: &Coords) -> Vector2<f64> {
        Vector2::new(self.rows[0].dot(v), self.rows[1].dot(v))
    }

    fn transpose_apply(&self, f: &Vector2<f64>) -> Coords {
        self.rows[0] * f[0] + self.rows[1] * f[1]
    }
}

struct BodyJacobian {
    mass: f64,
    inertia: f64,
    com: PointJacobian,
    /// Angular velocity is `omega · v`; constant in q so it has no bias.
    omega: Coords,
}

/// Point at distance `along_shank` down the shank (or on the thigh when
/// `along_shank` is `None`, at `along_thigh`).
fn leg_point(
    q: &Coords,
    v: &Coords,
    side: usize,
    along_thigh: f64,
    along_shank: Option<f64>,
) -> PointJacobian {
    let hip_idx = 2 + side;
    let knee_idx = 4 + side;
    let thigh_angle = q[hip_idx];
    let thigh_rate = v[hip_idx];
    let mut row_y = Coords::zeros();
    let mut row_z = Coords::zeros();
    row_y[0] = 1.0;
    row_z[1] = 1.0;
    let t_tan = axis_tangent(thigh_angle);
    row_y[hip_idx] = along_thigh * t_tan[0];
    row_z[hip_idx] = along_thigh * t_tan[1];
    // d/dθ of axis_tangent is -axis.
    let mut bias = -axis(thigh_angle) * (along_thigh * thigh_rate * thigh_rate);
    if let Some(d) = along_shank {
        let shank_angle = thigh_angle - q[knee_idx];
        let shank_rate = thigh_rate - v[knee_idx];
        let s_tan = axis_tangent(shank_angle);
        row_y[hip_idx] += d * s_tan[0];
        row_z[hip_idx] += d * s_tan[1];
        row_y[knee_idx] = -d * s_tan[0];
        row_z[knee_idx] = -d * s_tan[1];
        bias -= axis(shank_angle) * (d * shank_rate * shank_rate);
    }
    PointJacobian {
        rows: [row_y, row_z],
        bias,
    }
}

fn body_jacobians(spec: &RobotSpec, q: &Coords, v: &Coords) -> [BodyJacobian; 5] {
    let waist = spec.link(LinkName::Waist);
    let mut waist_rows = [Coords::zeros(), Coords::zeros()];
    waist_rows[0][0] = 1.0;
    waist_rows[1][1] = 1.0;
    let mk_omega = |side: usize, shank: bool| {
        let mut w = Coords::zeros();
        w[2 + side] = 1.0;
        if shank {
            w[4 + side] = -1.0;
        }
        w
    };
    [
        BodyJacobian {
            mass: waist.mass,
            inertia: waist.inertia,
            com: PointJacobian {
                rows: waist_rows,
                bias: Vector2::zeros(),
            },
            omega: Coords::zeros(),
        },
        BodyJacobian {
            mass: spec.thigh(0).mass,
            inertia: spec.thigh(0).inertia,
            com: leg_point(q, v, 0, spec.thigh(0).com_offset, None),
            omega: mk_omega(0, false),
        },
        BodyJacobian {
            mass: spec.thigh(1).mass,
            inertia: spec.thigh(1).inertia,
            com: leg_point(q, v, 1, spec.thigh(1).com_offset, None),
            omega: mk_omega(1, false),
        },
        BodyJacobian {
            mass: spec.shank(0).mass,
            inertia: spec.shank(0).inertia,
            com: leg_point(q, v, 0, spec.thigh(0).length, Some(spec.shank(0).com_offset)),
            omega: mk_omega(0, true),
        },
        BodyJacobian {
            mass: spec.shank(1).mass,
            inertia: spec.shank(1).inertia,
            com: leg_point(q, v, 1, spec.thigh(1).length, Some(spec.shank(1).com_offset)),
            omega: mk_omega(1, true),
        },
    ]
}

fn foot_jacobian(spec: &RobotSpec, q: &Coords, v: &Coords, side: usize) -> PointJacobian {
    leg_point(q, v, side, spec.thigh(side).length, Some(spec.shank(side).length))
}

/// Generalized force required to produce acceleration `a` at `(q, v)` with
/// gravitational acceleration `gravity` (magnitude, acting along -z).
pub fn inverse_dynamics(spec: &RobotSpec, q: &Coords, v: &Coords, a: &Coords, gravity: f64) -> Coords {
    let g = Vector2::new(0.0, -gravity);
    body_jacobians(spec, q, v)
        .iter()
        .fold(Coords::zeros(), |acc, body| {
            let lin = body.com.apply(a) + body.com.bias - g;
            let ang = body.omega.dot(a);
            acc + body.com.transpose_apply(&(lin * body.mass)) + body.omega * (body.inertia * ang)
        })
}

/// Generalized inertia, built one column per unit acceleration.
pub fn mass_matrix(spec: &RobotSpec, state: &RobotState) -> Matrix6<f64> {
    mass_matrix_at(spec, &state.q())
}

fn mass_matrix_at(spec: &RobotSpec, q: &Coords) -> Matrix6<f64> {
    let zero = Coords::zeros();
    let mut m = Matrix6::zeros();
    for j in 0..DOF {
        let mut unit = Coords::zeros();
        unit[j] = 1.0;
        m.set_column(j, &inverse_dynamics(spec, q, &zero, &unit, 0.0));
    }
    m
}

/// Coriolis, centrifugal and gravity terms: `h` in `M q̈ + h = τ`.
pub fn bias_forces(spec: &RobotSpec, state: &RobotState) -> Coords {
    inverse_dynamics(spec, &state.q(), &state.v(), &Coords::zeros(), spec.gravity)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactForce {
    /// N, along +z, never negative.
    pub normal: f64,
    /// N, along +y.
    pub tangential: f64,
}

/// Penalty spring-damper normal force with a viscous-regularized Coulomb cap.
pub fn contact_forces(spec: &RobotSpec, state: &RobotState) -> [ContactForce; 2] {
    let q = state.q();
    let v = state.v();
    let feet = forward_kinematics(spec, state).feet;
    let mut out = [ContactForce::default(); 2];
    for side in 0..2 {
        let height = feet[side][1];
        if height > 0.0 {
            continue;
        }
        let vel = foot_jacobian(spec, &q, &v, side).apply(&v);
        let normal = (spec.contact_stiffness * -height - spec.contact_damping * vel[1]).max(0.0);
        let cap = spec.friction_coefficient * normal;
        let tangential = (-spec.friction_viscosity * vel[0]).clamp(-cap, cap);
        out[side] = ContactForce { normal, tangential };
    }
    out
}

/// Potential energy stored in the contact springs.
pub fn contact_energy(spec: &RobotSpec, state: &RobotState) -> f64 {
    forward_kinematics(spec, state)
        .feet
        .iter()
        .map(|f| {
            let depth = (-f[1]).max(0.0);
            0.5 * spec.contact_stiffness * depth * depth
        })
        .sum()
}

/// Kinetic plus gravitational energy, summed link by link (zero potential at ground level).
pub fn total_energy(spec: &RobotSpec, state: &RobotState) -> f64 {
    let q = state.q();
    let v = state.v();
    let kin = forward_kinematics(spec, state);
    body_jacobians(spec, &q, &v)
        .iter()
        .zip(kin.links.iter())
        .map(|(body, pose)| {
            let lin = body.com.apply(&v);
            let ang = body.omega.dot(&v);
            0.5 * body.mass * lin.norm_squared()
                + 0.5 * body.inertia * ang * ang
                + body.mass * spec.gravity * pose.com[1]
        })
        .sum()
}

pub fn check_fall(spec: &RobotSpec, state: &RobotState) -> bool {
    state.waist_pos[1] < spec.fall_threshold()
}

/// Coordinates held fixed during a step (zero velocity, no acceleration).
/// Used by fixtures such as a pinned-hip pendulum test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CoordLocks(pub [bool; DOF]);

impl CoordLocks {
    pub const NONE: CoordLocks = CoordLocks([false; DOF]);
}

pub fn step(
    spec: &RobotSpec,
    state: &RobotState,
    torques: [f64; 4],
    dt: f64,
) -> Result<RobotState, DynamicsError> {
    step_with_locks(spec, state, torques, dt, CoordLocks::NONE)
}

#[derive(Debug, Clone, Copy)]
struct Stop {
    upper: bool,
    /// Joint velocity that lands the joint on the limit this step.
    velocity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tangent {
    Viscous,
    /// Coulomb-saturated with a fixed force direction and the normal force
    /// from the previous iterate.
    Saturated { sign: f64, normal: f64 },
}

/// Semi-implicit Euler: `v ← v + dt·M⁻¹(τ - h + Jᵀf)`, `q ← q + dt·v`.
///
/// Contact forces are linearly implicit: the penalty spring acts on the
/// end-of-step penetration `depth - dt·ż` and the damper and viscous
/// friction on the new velocity, which keeps light distal links stable at
/// millisecond steps and makes contact dissipative. An active-set pass drops
/// feet whose normal force would turn adhesive and switches over-cap
/// friction to Coulomb sliding.
pub fn step_with_locks(
    spec: &RobotSpec,
    state: &RobotState,
    torques: [f64; 4],
    dt: f64,
    locks: CoordLocks,
) -> Result<RobotState, DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidTimeStep(dt));
    }
    let q = state.q();
    let v = state.v();
    let mass = mass_matrix_at(spec, &q);
    let bias = inverse_dynamics(spec, &q, &v, &Coords::zeros(), spec.gravity);
    let mut tau = Coords::zeros();
    for (j, t) in torques.iter().enumerate() {
        tau[2 + j] = *t;
    }
    let base_rhs = mass * v + (tau - bias) * dt;

    let feet = forward_kinematics(spec, state).feet;
    let jacobians = [foot_jacobian(spec, &q, &v, 0), foot_jacobian(spec, &q, &v, 1)];
    let mut active = [0, 1].map(|side| feet[side][1] + dt * jacobians[side].rows[1].dot(&v) < 0.0);
    let mut tangent = [Tangent::Viscous; 2];
    let k = spec.contact_stiffness;
    let c = spec.contact_damping;
    let cf = spec.friction_viscosity;
    let mu = spec.friction_coefficient;

    let mut stops: [Option<Stop>; NUM_JOINTS] = [None; NUM_JOINTS];
    let mut v_new = v;
    for _ in 0..MAX_CONTACT_ITERS {
        let mut a = mass;
        let mut rhs = base_rhs;
        for side in 0..2 {
            if !active[side] {
                continue;
            }
            let [jy, jz] = jacobians[side].rows;
            let depth = -feet[side][1];
            a += jz * jz.transpose() * (dt * c + dt * dt * k);
            rhs += jz * (dt * k * depth);
            match tangent[side] {
                Tangent::Viscous => a += jy * jy.transpose() * (dt * cf),
                Tangent::Saturated { sign, normal } => rhs += jy * (dt * sign * mu * normal),
            }
        }
        let (a_free, rhs_free) = (a, rhs);
        let mut fixed = [None; DOF];
        for (i, locked) in locks.0.iter().enumerate() {
            if *locked {
                fixed[i] = Some(0.0);
            }
        }
        for (j, stop) in stops.iter().enumerate() {
            if let (Some(stop), None) = (stop, fixed[2 + j]) {
                fixed[2 + j] = Some(stop.velocity);
            }
        }
        for (i, value) in fixed.iter().enumerate() {
            if let Some(value) = value {
                rhs -= a_free.column(i) * *value;
            }
        }
        for (i, value) in fixed.iter().enumerate() {
            if let Some(value) = value {
                a.fill_row(i, 0.0);
                a.fill_column(i, 0.0);
                a[(i, i)] = 1.0;
                rhs[i] = *value;
            }
        }
        let chol = a.cholesky().ok_or(DynamicsError::SingularMassMatrix)?;
        v_new = chol.solve(&rhs);

        let mut changed = false;
        for side in 0..2 {
            if !active[side] {
                continue;
            }
            let [jy, jz] = jacobians[side].rows;
            let depth = -feet[side][1];
            let sink = jz.dot(&v_new);
            let normal = k * (depth - dt * sink) - c * sink;
            if normal < 0.0 {
                active[side] = false;
                changed = true;
                continue;
            }
            let slip = jy.dot(&v_new);
            match tangent[side] {
                Tangent::Viscous => {
                    if (cf * slip).abs() > mu * normal {
                        tangent[side] = Tangent::Saturated {
                            sign: -slip.signum(),
                            normal,
                        };
                        changed = true;
                    }
                }
                Tangent::Saturated { sign, normal: prev } => {
                    if (normal - prev).abs() > 1e-12 * (1.0 + normal) {
                        tangent[side] = Tangent::Saturated { sign, normal };
                        changed = true;
                    }
                }
            }
        }
        // Joint stops: a joint about to pass a limit lands exactly on it; a
        // stop whose impulse would pull the joint off the limit is released.
        let impulse = a_free * v_new - rhs_free;
        for (j, stop) in stops.iter_mut().enumerate() {
            let i = 2 + j;
            if locks.0[i] {
                continue;
            }
            let (lo, hi) = spec.limits.range(j);
            match *stop {
                None => {
                    let reach = q[i] + dt * v_new[i];
                    if reach > hi {
                        *stop = Some(Stop {
                            upper: true,
                            velocity: (hi - q[i]).max(0.0) / dt,
                        });
                        changed = true;
                    } else if reach < lo {
                        *stop = Some(Stop {
                            upper: false,
                            velocity: (lo - q[i]).min(0.0) / dt,
                        });
                        changed = true;
                    }
                }
                Some(Stop { upper, .. }) => {
                    if (upper && impulse[i] > 0.0) || (!upper && impulse[i] < 0.0) {
                        *stop = None;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut q_new = q + v_new * dt;
    for j in 0..NUM_JOINTS {
        let idx = 2 + j;
        if locks.0[idx] {
            continue;
        }
        let (lo, hi) = spec.limits.range(j);
        if q_new[idx] < lo {
            q_new[idx] = lo;
            v_new[idx] = v_new[idx].max(0.0);
        } else if q_new[idx] > hi {
            q_new[idx] = hi;
            v_new[idx] = v_new[idx].min(0.0);
        }
    }

    let mut next = RobotState::from_coords(&q_new, &v_new, state.sim_time + dt);
    if !next.is_finite() {
        return Err(DynamicsError::Diverged {
            time: state.sim_time,
        });
    }
    next.refresh_contacts(spec);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[track_caller]
    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn at(waist: [f64; 2], angles: [f64; 4]) -> RobotState {
        RobotState {
            waist_pos: waist,
            waist_vel: [0.0; 2],
            joint_angles: angles,
            joint_vels: [0.0; 4],
            foot_contact: [false; 2],
            sim_time: 0.0,
        }
    }

    #[allow(clippy::approx_constant)]
    #[test]
    fn default_robot_matches_reference_tables() {
        let spec = build_default_robot();
        assert_eq!(spec.link(LinkName::Waist).mass, 0.36416);
        assert_eq!(spec.link(LinkName::ThighR).mass, 0.045155);
        assert_eq!(spec.link(LinkName::ShankR).mass, 0.069508);
        assert_eq!(spec.link(LinkName::ShankL).mass, 0.069508);
        assert_eq!(spec.limits.hip_extension_max, 0.523599);
        assert_eq!(spec.limits.knee_flexion_max, 2.26893);
        assert_eq!(spec.limits.knee_extension_max, 0.261799);
        assert_close(spec.total_mass(), 0.593486, 1e-12);
        spec.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let mut spec = build_default_robot();
        spec.contact_stiffness = 0.0;
        assert!(spec.validate().is_err());
        let mut spec = build_default_robot();
        spec.links[2].com_offset = 1.0;
        assert!(spec.validate().is_err());
        let mut spec = build_default_robot();
        spec.links.swap(1, 2);
        assert!(spec.validate().is_err());
        let mut spec = build_default_robot();
        spec.limits.knee_flexion_max = 0.0;
        spec.limits.knee_extension_max = 0.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn straight_leg_foot_hangs_below_hip() {
        let spec = build_default_robot();
        let kin = forward_kinematics(&spec, &at([0.0, 1.0], [0.0; 4]));
        for foot in kin.feet {
            assert_close(foot[0], 0.0, 1e-15);
            assert_close(foot[1], 1.0 - 0.44, 1e-15);
        }
    }

    #[test]
    fn horizontal_leg_reaches_forward() {
        let spec = build_default_robot();
        let half_pi = std::f64::consts::FRAC_PI_2;
        let kin = forward_kinematics(&spec, &at([0.3, 1.0], [half_pi, 0.0, 0.0, 0.0]));
        assert_close(kin.feet[0][0], 0.3 + 0.44, 1e-12);
        assert_close(kin.feet[0][1], 1.0, 1e-12);
    }

    #[test]
    fn mass_matrix_translational_entry_is_total_mass() {
        let spec = build_default_robot();
        let m = mass_matrix(&spec, &at([0.0, 0.5], [0.4, -0.2, 1.1, 0.3]));
        assert_close(m[(0, 0)], 0.593486, 1e-12);
        assert_close(m[(1, 1)], 0.593486, 1e-12);
    }

    #[test]
    fn mass_matrix_depends_on_configuration() {
        let spec = build_default_robot();
        let extended = mass_matrix(&spec, &at([0.0, 0.5], [0.0; 4]));
        let folded = mass_matrix(&spec, &at([0.0, 0.5], [0.0, 0.0, 2.0, 2.0]));
        assert!((extended[(2, 2)] - folded[(2, 2)]).abs() > 1e-4);
        let shifted = mass_matrix(&spec, &at([3.0, -1.0], [0.0, 0.0, 2.0, 2.0]));
        assert_eq!(folded, shifted);
    }

    #[test]
    fn contact_force_penalty_and_clearance() {
        let spec = build_default_robot();
        let h = spec.standing_height();
        let clear = at([0.0, h + 0.01], [0.0; 4]);
        let f = contact_forces(&spec, &clear);
        assert_eq!(f[0], ContactForce::default());
        let pressed = at([0.0, h - 0.001], [0.0; 4]);
        let f = contact_forces(&spec, &pressed);
        assert_close(f[0].normal, 10.0, 1e-9);
        assert_close(f[1].normal, 10.0, 1e-9);
        assert_eq!(f[0].tangential, 0.0);
    }

    #[test]
    fn friction_respects_coulomb_cap() {
        let spec = build_default_robot();
        let mut s = at([0.0, spec.standing_height() - 0.001], [0.0; 4]);
        s.waist_vel = [2.0, 0.0];
        let f = contact_forces(&spec, &s);
        assert_close(f[0].tangential, -spec.friction_coefficient * f[0].normal, 1e-12);
    }

    #[test]
    fn free_fall_loses_g_dt_of_vertical_speed() {
        let spec = build_default_robot();
        let s = at([0.0, 2.0], [0.3, -0.1, 0.5, 0.2]);
        let dt = 1e-3;
        let next = step(&spec, &s, [0.0; 4], dt).unwrap();
        assert_close(next.waist_vel[1], -spec.gravity * dt, 1e-12);
        assert_close(next.sim_time, dt, 0.0);
    }

    #[test]
    fn joint_limit_is_an_inelastic_stop() {
        let spec = build_default_robot();
        let lo = -spec.limits.hip_extension_max;
        let s = at([0.0, 2.0], [lo, 0.0, 0.5, 0.5]);
        let next = step(&spec, &s, [-3.0, 0.0, 0.0, 0.0], 1e-3).unwrap();
        assert_eq!(next.joint_angles[0], lo);
        assert_eq!(next.joint_vels[0], 0.0);
    }

    #[test]
    fn step_is_bitwise_deterministic() {
        let spec = build_default_robot();
        let mut s = RobotState::standing(&spec);
        s.joint_angles = [0.05, -0.03, 0.02, 0.04];
        let a = step(&spec, &s, [0.4, -0.2, 0.1, 0.0], 1e-3).unwrap();
        let b = step(&spec, &s, [0.4, -0.2, 0.1, 0.0], 1e-3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_time_step() {
        let spec = build_default_robot();
        let s = RobotState::standing(&spec);
        assert!(matches!(
            step(&spec, &s, [0.0; 4], 0.0),
            Err(DynamicsError::InvalidTimeStep(_))
        ));
    }

    #[test]
    fn diverged_state_is_reported() {
        let spec = build_default_robot();
        let mut s = RobotState::standing(&spec);
        s.waist_vel[0] = f64::NAN;
        assert!(step(&spec, &s, [0.0; 4], 1e-3).is_err());
    }

    #[test]
    fn energy_at_rest_is_potential_only() {
        let spec = build_default_robot();
        let s = at([0.0, 1.0], [0.2, -0.1, 0.3, 0.0]);
        let kin = forward_kinematics(&spec, &s);
        let expected: f64 = spec
            .links
            .iter()
            .zip(kin.links.iter())
            .map(|(l, p)| l.mass * spec.gravity * p.com[1])
            .sum();
        assert_close(total_energy(&spec, &s), expected, 1e-12);
    }

    #[test]
    fn translating_robot_kinetic_energy() {
        let mut spec = build_default_robot();
        spec.gravity = 0.0;
        let mut s = at([0.0, 1.0], [0.2, -0.1, 0.3, 0.0]);
        s.waist_vel = [1.0, 0.0];
        assert_close(total_energy(&spec, &s), 0.5 * 0.593486, 1e-12);
    }

    #[test]
    fn fall_threshold_is_strict() {
        let spec = build_default_robot();
        let standing = RobotState::standing(&spec);
        assert!(!check_fall(&spec, &standing));
        let low = at([0.0, 0.5 * spec.standing_height()], [0.0; 4]);
        assert!(check_fall(&spec, &low));
        let edge = at([0.0, spec.fall_threshold()], [0.0; 4]);
        assert!(!check_fall(&spec, &edge));
    }

    #[test]
    fn standing_state_has_both_contacts() {
        let spec = build_default_robot();
        let s = RobotState::standing(&spec);
        assert_eq!(s.foot_contact, [true, true]);
        let f = contact_forces(&spec, &s);
        assert_close(f[0].normal + f[1].normal, spec.total_mass() * spec.gravity, 1e-9);
    }
}
