//! Serial 6-joint revolute chain: forward kinematics, geometric Jacobian and
//! a damped-least-squares inverse kinematics solver.
//!
//! The reference chain has consecutive joint axes z, y, y, z, y, z (shoulder
//! yaw, shoulder pitch, elbow, forearm roll, wrist pitch, wrist roll). Link
//! offsets live in [`ArmModel::reference`]; they are representative of a
//! wheelchair-mounted assistive arm, not a replica of a commercial one.

use nalgebra::{Matrix3, Matrix6, Rotation3, Unit, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pose::{vec3_serde, Pose};

pub const NUM_JOINTS: usize = 6;

/// Joint-space vector (angles, velocities or torques).
pub type Joints = Vector6<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("joint {joint} angle {angle} outside [{lower}, {upper}]")]
    JointLimitViolation {
        joint: usize,
        angle: f64,
        lower: f64,
        upper: f64,
    },
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
    #[error("inverse kinematics did not converge (position error {position_error:.4} m, orientation error {orientation_error:.4} rad)")]
    IkDidNotConverge {
        position_error: f64,
        orientation_error: f64,
    },
}

/// One revolute joint and the fixed transform from its parent frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDescriptor {
    pub name: String,
    /// Parent-to-joint transform applied before the joint rotation.
    pub origin: Pose,
    #[serde(with = "vec3_serde")]
    pub axis: Vector3<f64>,
    /// `[lower, upper]`, radians.
    pub limits: [f64; 2],
    /// rad/s
    pub velocity_limit: f64,
    /// N·m
    pub torque_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub links: Vec<JointDescriptor>,
    /// Flange (last joint frame) to fork tip.
    pub tool_transform: Pose,
}

/// Link table for the reference chain: (name, origin xyz, axis, limits,
/// velocity limit, torque limit).
const REFERENCE_CHAIN: [(&str, [f64; 3], [f64; 3], [f64; 2], f64, f64); NUM_JOINTS] = [
    (
        "shoulder_yaw",
        [0.0, 0.0, 0.15],
        [0.0, 0.0, 1.0],
        [-3.2, 3.2],
        1.0,
        30.0,
    ),
    (
        "shoulder_pitch",
        [0.0, 0.0, 0.15],
        [0.0, 1.0, 0.0],
        [-2.2, 2.2],
        1.0,
        30.0,
    ),
    (
        "elbow",
        [0.0, 0.0, 0.40],
        [0.0, 1.0, 0.0],
        [-2.6, 2.6],
        1.0,
        20.0,
    ),
    (
        "forearm_roll",
        [0.025, 0.0, 0.20],
        [0.0, 0.0, 1.0],
        [-3.2, 3.2],
        1.0,
        10.0,
    ),
    (
        "wrist_pitch",
        [0.0, 0.0, 0.15],
        [0.0, 1.0, 0.0],
        [-2.2, 2.2],
        1.0,
        10.0,
    ),
    (
        "wrist_roll",
        [0.0, 0.0, 0.08],
        [0.0, 0.0, 1.0],
        [-3.2, 3.2],
        1.0,
        10.0,
    ),
];

/// Flange-to-fork-tip length of the reference tool.
pub const REFERENCE_TOOL_LENGTH: f64 = 0.12;

impl ArmModel {
    pub fn reference() -> Self {
        let links = REFERENCE_CHAIN
            .iter()
            .map(|(name, xyz, axis, limits, vel, torque)| JointDescriptor {
                name: name.to_string(),
                origin: Pose::from_translation(xyz[0], xyz[1], xyz[2]),
                axis: Vector3::from(*axis),
                limits: *limits,
                velocity_limit: *vel,
                torque_limit: *torque,
            })
            .collect();
        Self {
            links,
            tool_transform: Pose::from_translation(0.0, 0.0, REFERENCE_TOOL_LENGTH),
        }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if self.links.len() != NUM_JOINTS {
            return Err(KinematicsError::InvalidModel(format!(
                "expected {NUM_JOINTS} joints, got {}",
                self.links.len()
            )));
        }
        for (i, l) in self.links.iter().enumerate() {
            if (l.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {i} axis is not a unit vector"
                )));
            }
            let [lo, hi] = l.limits;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {i} limits [{lo}, {hi}] are not a nonempty interval"
                )));
            }
            if !(l.velocity_limit > 0.0 && l.torque_limit > 0.0) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {i} velocity and torque limits must be positive"
                )));
            }
            if !l.origin.is_finite() {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {i} origin is not finite"
                )));
            }
        }
        Ok(())
    }

    pub fn lower_limits(&self) -> Joints {
        Joints::from_fn(|i, _| self.links[i].limits[0])
    }

    pub fn upper_limits(&self) -> Joints {
        Joints::from_fn(|i, _| self.links[i].limits[1])
    }

    pub fn velocity_limits(&self) -> Joints {
        Joints::from_fn(|i, _| self.links[i].velocity_limit)
    }

    pub fn torque_limits(&self) -> Joints {
        Joints::from_fn(|i, _| self.links[i].torque_limit)
    }

    pub fn check_limits(&self, q: &Joints) -> Result<(), KinematicsError> {
        for (i, l) in self.links.iter().enumerate() {
            let [lower, upper] = l.limits;
            if !(q[i] >= lower && q[i] <= upper) {
                return Err(KinematicsError::JointLimitViolation {
                    joint: i,
                    angle: q[i],
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }

    pub fn clamp_to_limits(&self, q: &Joints) -> Joints {
        Joints::from_fn(|i, _| q[i].clamp(self.links[i].limits[0], self.links[i].limits[1]))
    }

    /// World frames of each joint (after its rotation), followed by the tool
    /// tip. No limit check.
    pub fn frames(&self, q: &Joints) -> [Pose; NUM_JOINTS + 1] {
        let mut out = [Pose::identity(); NUM_JOINTS + 1];
        let mut t = Pose::identity();
        for (i, l) in self.links.iter().enumerate() {
            t = t.compose(&l.origin);
            t = t.compose(&Pose::from_axis_angle(l.axis, q[i]));
            out[i] = t;
        }
        out[NUM_JOINTS] = t.compose(&self.tool_transform);
        out
    }

    /// Fork-tip pose without the limit precondition.
    pub fn tip_pose(&self, q: &Joints) -> Pose {
        self.frames(q)[NUM_JOINTS]
    }

    /// Flange (last joint) pose without the limit precondition.
    pub fn flange_pose(&self, q: &Joints) -> Pose {
        self.frames(q)[NUM_JOINTS - 1]
    }

    /// Geometric Jacobian at the fork tip. Rows 0..3 linear, 3..6 angular.
    pub fn jacobian(&self, q: &Joints) -> Matrix6<f64> {
        let frames = self.frames(q);
        let tip = frames[NUM_JOINTS].position;
        let mut jac = Matrix6::zeros();
        for i in 0..NUM_JOINTS {
            let axis = frames[i].orientation * self.links[i].axis;
            let lin = axis.cross(&(tip - frames[i].position));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&axis);
        }
        jac
    }
}

/// Fork-tip pose for joint angles `q`.
pub fn forward_kinematics(arm: &ArmModel, q: &Joints) -> Result<Pose, KinematicsError> {
    arm.check_limits(q)?;
    Ok(arm.tip_pose(q))
}

/// Six-vector twist error `[dp; dθ]` that moves `from` toward `to`.
pub fn pose_error(from: &Pose, to: &Pose) -> Vector6<f64> {
    let dp = to.position - from.position;
    let rot = to.orientation * from.orientation.inverse();
    let dth = rot.scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, dth.x, dth.y, dth.z)
}

/// Damped least-squares joint step for a desired tip twist.
pub fn dls_step(jac: &Matrix6<f64>, twist: &Vector6<f64>, damping: f64) -> Joints {
    let jjt = jac * jac.transpose() + Matrix6::identity() * (damping * damping);
    match jjt.cholesky() {
        Some(ch) => jac.transpose() * ch.solve(twist),
        None => Joints::zeros(),
    }
}

/// Orientation whose z-axis points along `pointing` with the x-axis as close
/// to `up_hint` as possible.
pub fn tool_orientation(pointing: &Vector3<f64>, up_hint: &Vector3<f64>) -> UnitQuaternion<f64> {
    let z = pointing.normalize();
    let mut x = up_hint - z * z.dot(up_hint);
    if x.norm() < 1e-9 {
        let alt = if z.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        x = alt - z * z.dot(&alt);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

#[derive(Debug, Clone, Copy)]
pub struct IkOptions {
    pub max_iterations: usize,
    pub position_tolerance: f64,
    pub orientation_tolerance: f64,
    pub damping: f64,
    /// Weight of rotational error relative to translational (meters per radian).
    pub orientation_weight: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            position_tolerance: 1e-6,
            orientation_tolerance: 1e-5,
            damping: 0.02,
            orientation_weight: 0.2,
        }
    }
}

/// Iterative damped-least-squares IK from `seed`, clamped to joint limits.
pub fn solve_ik(
    arm: &ArmModel,
    target: &Pose,
    seed: &Joints,
    opts: &IkOptions,
) -> Result<Joints, KinematicsError> {
    let mut q = arm.clamp_to_limits(seed);
    let w = opts.orientation_weight;
    let mut last = (f64::INFINITY, f64::INFINITY);
    for _ in 0..opts.max_iterations {
        let tip = arm.tip_pose(&q);
        let err = pose_error(&tip, target);
        let pe = err.fixed_rows::<3>(0).norm();
        let oe = err.fixed_rows::<3>(3).norm();
        last = (pe, oe);
        if pe < opts.position_tolerance && oe < opts.orientation_tolerance {
            return Ok(q);
        }
        let mut jac = arm.jacobian(&q);
        let mut e = err;
        for r in 3..6 {
            e[r] *= w;
            for c in 0..NUM_JOINTS {
                jac[(r, c)] *= w;
            }
        }
        let mut dq = dls_step(&jac, &e, opts.damping);
        let step = dq.amax();
        if step > 0.2 {
            dq *= 0.2 / step;
        }
        q = arm.clamp_to_limits(&(q + dq));
    }
    Err(KinematicsError::IkDidNotConverge {
        position_error: last.0,
        orientation_error: last.1,
    })
}

/// Unit axis helper used by callers building rotations.
pub fn unit(v: Vector3<f64>) -> Unit<Vector3<f64>> {
    Unit::new_normalize(v)
}
