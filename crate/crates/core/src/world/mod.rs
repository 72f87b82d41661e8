//! Deterministic kinematic world: the arm, the plate and its food, the human
//! head, and the reactive user who bites food off the fork.
//!
//! [`WorldState`] is an immutable snapshot; [`step_world`] produces the next
//! one. Static configuration is shared behind an `Arc` so snapshots are cheap
//! to clone and hand to readers.

pub mod kinematics;
pub mod noise;
pub mod pose;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kinematics::{forward_kinematics, ArmModel, JointDescriptor, Joints, KinematicsError};
pub use pose::Pose;

use crate::sensors::{self, SensorConfig, UtensilState, Wrench};
use kinematics::{solve_ik, tool_orientation, IkOptions};
use noise::Stream;
use pose::{vec3_serde, vec6_serde};

/// Control period of the reference loop, seconds.
pub const CONTROL_DT: f64 = 0.01;
/// Largest accepted integration step, seconds.
pub const MAX_DT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("timestep {0} outside (0, {MAX_DT}]")]
    InvalidTimestep(f64),
    #[error("command component {0} is not finite")]
    NonFiniteCommand(usize),
    #[error("approach offset {0:.3} m exceeds 0.3 m")]
    ApproachOffsetTooLarge(f64),
    #[error("invalid world: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    #[serde(with = "vec6_serde")]
    pub angles: Joints,
    #[serde(with = "vec6_serde")]
    pub velocities: Joints,
    #[serde(with = "vec6_serde")]
    pub torques: Joints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodItem {
    pub id: String,
    pub food_class: String,
    pub pose: Pose,
    #[serde(with = "vec3_serde")]
    pub major_axis: Vector3<f64>,
    /// Full extents along the food frame axes, meters.
    #[serde(with = "vec3_serde")]
    pub size: Vector3<f64>,
    /// N per meter of tine penetration.
    pub resistance: f64,
    /// Arm index → success probability. Simulation oracle only; never read
    /// by the learner.
    #[serde(default)]
    pub ground_truth_success: BTreeMap<usize, f64>,
}

impl FoodItem {
    pub fn validate(&self) -> Result<(), WorldError> {
        if !self.size.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(WorldError::Invalid(format!(
                "food {} extents must be > 0",
                self.id
            )));
        }
        if !(self.resistance >= 0.0 && self.resistance.is_finite()) {
            return Err(WorldError::Invalid(format!(
                "food {} resistance must be >= 0",
                self.id
            )));
        }
        if let Some((arm, p)) = self
            .ground_truth_success
            .iter()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(WorldError::Invalid(format!(
                "food {} success probability {p} for arm {arm} outside [0, 1]",
                self.id
            )));
        }
        if !self.pose.is_finite() || self.major_axis.norm() < 1e-12 {
            return Err(WorldError::Invalid(format!(
                "food {} has a degenerate pose",
                self.id
            )));
        }
        Ok(())
    }

    /// Height of the top surface, world z.
    pub fn top(&self) -> f64 {
        self.pose.position.z + 0.5 * self.size.z
    }

    pub fn success_probability(&self, arm: usize) -> f64 {
        self.ground_truth_success.get(&arm).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plate {
    /// Center of the plate surface.
    #[serde(with = "vec3_serde")]
    pub center: Vector3<f64>,
    pub radius: f64,
    /// N/m when the tip pushes below the surface.
    pub stiffness: f64,
}

impl Default for Plate {
    fn default() -> Self {
        Self {
            center: Vector3::new(0.30, 0.35, 0.0),
            radius: 0.12,
            stiffness: 2000.0,
        }
    }
}

/// Static spherical obstacle with a linear contact spring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: String,
    #[serde(with = "vec3_serde")]
    pub center: Vector3<f64>,
    pub radius: f64,
    pub stiffness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    /// Per-axis amplitude, meters.
    pub amplitude: [f64; 3],
    pub frequency_hz: f64,
    pub phase: f64,
}

/// Involuntary head displacement: a jump at `time` decaying as `exp(-decay·dt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spasm {
    pub time: f64,
    pub displacement: [f64; 3],
    /// 1/s, > 0
    pub decay: f64,
}

impl Spasm {
    pub fn offset_at(&self, t: f64) -> Vector3<f64> {
        if t < self.time {
            Vector3::zeros()
        } else {
            Vector3::from(self.displacement) * (-self.decay * (t - self.time)).exp()
        }
    }
}

/// Piecewise-constant boolean: starts at `initial`, flips at each toggle time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BoolSignal {
    pub initial: bool,
    #[serde(default)]
    pub toggles: Vec<f64>,
}

impl BoolSignal {
    pub fn constant(value: bool) -> Self {
        Self {
            initial: value,
            toggles: Vec::new(),
        }
    }

    pub fn at(&self, t: f64) -> bool {
        let flips = self.toggles.iter().filter(|&&s| s <= t).count();
        self.initial ^ (flips % 2 == 1)
    }
}

/// Face and mouth contact geometry, expressed in the mouth frame (x = outward
/// normal, z = up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MouthGeometry {
    pub opening_radius: f64,
    pub cavity_depth: f64,
    pub face_radius: f64,
    /// N/m for lips, cheeks and cavity walls.
    pub tissue_stiffness: f64,
}

impl Default for MouthGeometry {
    fn default() -> Self {
        Self {
            opening_radius: 0.02,
            cavity_depth: 0.05,
            face_radius: 0.10,
            tissue_stiffness: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadModel {
    /// Mouth pose at rest; orientation x-axis is the outward mouth normal.
    pub base_pose: Pose,
    #[serde(default)]
    pub voluntary: Vec<Sinusoid>,
    #[serde(default)]
    pub spasm_schedule: Vec<Spasm>,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "signal_true")]
    pub mouth_open: BoolSignal,
    #[serde(default)]
    pub talking: BoolSignal,
    #[serde(default)]
    pub mouth: MouthGeometry,
}

fn signal_true() -> BoolSignal {
    BoolSignal::constant(true)
}

impl Default for HeadModel {
    fn default() -> Self {
        Self {
            base_pose: Pose::new(
                Vector3::new(0.0, 0.45, 0.45),
                UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -std::f64::consts::FRAC_PI_4),
            ),
            voluntary: Vec::new(),
            spasm_schedule: Vec::new(),
            noise_std: 0.0,
            mouth_open: signal_true(),
            talking: BoolSignal::default(),
            mouth: MouthGeometry::default(),
        }
    }
}

impl HeadModel {
    pub fn validate(&self) -> Result<(), WorldError> {
        for s in &self.voluntary {
            if s.amplitude.iter().any(|a| !(*a >= 0.0)) {
                return Err(WorldError::Invalid(
                    "sinusoid amplitudes must be >= 0".into(),
                ));
            }
        }
        for s in &self.spasm_schedule {
            if !(s.decay > 0.0) {
                return Err(WorldError::Invalid(
                    "spasm decay constants must be > 0".into(),
                ));
            }
        }
        if !(self.noise_std >= 0.0) {
            return Err(WorldError::Invalid("head noise_std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn voluntary_offset(&self, t: f64) -> Vector3<f64> {
        self.voluntary.iter().fold(Vector3::zeros(), |acc, s| {
            let w = (2.0 * std::f64::consts::PI * s.frequency_hz * t + s.phase).sin();
            acc + Vector3::from(s.amplitude) * w
        })
    }

    pub fn spasm_offset(&self, t: f64) -> Vector3<f64> {
        self.spasm_schedule
            .iter()
            .fold(Vector3::zeros(), |acc, s| acc + s.offset_at(t))
    }

    /// Head (mouth) pose at `t` before sensor-independent tremor noise.
    pub fn noiseless_pose(&self, t: f64) -> Pose {
        Pose::new(
            self.base_pose.position + self.voluntary_offset(t) + self.spasm_offset(t),
            self.base_pose.orientation,
        )
    }

    pub fn mouth_normal(&self) -> Vector3<f64> {
        self.base_pose.x_axis()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReactionKind {
    /// Press on the tines then release; consumes the food on release.
    Bite,
    Manipulation,
    Incidental,
}

/// One user reaction, timed from the moment the fork is presented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    pub kind: ReactionKind,
    pub delay: f64,
    pub duration: f64,
    /// Force applied to the fork, mouth frame, newtons.
    pub force: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserBehavior {
    /// The fork counts as presented while its tip is this close to the mouth.
    pub presentation_radius: f64,
    /// Presentation starts only while the tip moves slower than this (m/s).
    #[serde(default = "default_presentation_speed")]
    pub presentation_max_speed: f64,
    pub reactions: Vec<Reaction>,
}

fn default_presentation_speed() -> f64 {
    0.02
}

impl Default for UserBehavior {
    fn default() -> Self {
        Self {
            presentation_radius: 0.08,
            presentation_max_speed: default_presentation_speed(),
            reactions: vec![Reaction {
                kind: ReactionKind::Bite,
                delay: 1.0,
                duration: 0.15,
                force: [0.0, 0.0, -2.0],
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UserState {
    pub presented_since: Option<f64>,
    pub bite_taken: bool,
    pub consumed: Vec<String>,
}

/// Named arm configurations used by the feeding trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stations {
    #[serde(with = "vec6_serde")]
    pub rest: Joints,
    #[serde(with = "vec6_serde")]
    pub above_plate: Joints,
    #[serde(with = "vec6_serde")]
    pub staging: Joints,
}

/// Height of the above-plate station over the plate surface.
pub const ABOVE_PLATE_HEIGHT: f64 = 0.15;
/// Distance of the staging station from the mouth along its normal.
pub const STAGING_DISTANCE: f64 = 0.25;

impl Stations {
    /// Rest configuration of the reference arm: fork tucked low and forward.
    pub fn reference_rest() -> Joints {
        Joints::new(0.3, -0.2, 2.0, 0.0, 1.2, 0.0)
    }

    /// Solve the above-plate and staging stations for the given layout.
    pub fn solve(arm: &ArmModel, plate: &Plate, head: &HeadModel) -> Result<Self, WorldError> {
        let rest = Stations::reference_rest();
        let above = Pose::new(
            plate.center + Vector3::new(0.0, 0.0, ABOVE_PLATE_HEIGHT),
            tool_orientation(&-Vector3::z(), &Vector3::x()),
        );
        let n = head.mouth_normal();
        let staging = Pose::new(
            head.base_pose.position + n * STAGING_DISTANCE,
            tool_orientation(&-n, &Vector3::z()),
        );
        let opts = IkOptions::default();
        let above_plate = solve_ik(arm, &above, &rest, &opts)?;
        let staging = solve_ik(arm, &staging, &rest, &opts)?;
        Ok(Self {
            rest,
            above_plate,
            staging,
        })
    }
}

/// Everything about the world that does not change while stepping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub arm: ArmModel,
    pub plate: Plate,
    pub head: HeadModel,
    #[serde(default)]
    pub user: UserBehavior,
    #[serde(default)]
    pub sensors: SensorConfig,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    /// N·m·s/rad, torque-mode velocity response.
    #[serde(default = "default_damping")]
    pub torque_damping: f64,
    pub stations: Stations,
}

fn default_damping() -> f64 {
    5.0
}

impl WorldConfig {
    /// Reference layout: arm at the origin, user seated to its front-left and
    /// facing the arm diagonally, plate in front of the user.
    pub fn reference() -> Self {
        let arm = ArmModel::reference();
        let plate = Plate::default();
        let head = HeadModel::default();
        let stations =
            Stations::solve(&arm, &plate, &head).expect("reference stations are reachable");
        Self {
            arm,
            plate,
            head,
            user: UserBehavior::default(),
            sensors: SensorConfig::default(),
            obstacles: Vec::new(),
            torque_damping: default_damping(),
            stations,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        self.arm.validate()?;
        self.head.validate()?;
        self.sensors.validate().map_err(WorldError::Invalid)?;
        if !(self.torque_damping > 0.0) {
            return Err(WorldError::Invalid("torque_damping must be > 0".into()));
        }
        for (name, q) in [
            ("rest", &self.stations.rest),
            ("above_plate", &self.stations.above_plate),
            ("staging", &self.stations.staging),
        ] {
            self.arm
                .check_limits(q)
                .map_err(|e| WorldError::Invalid(format!("station {name}: {e}")))?;
        }
        Ok(())
    }
}

/// Fault injections that the scenario harness toggles on a live world.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldFaults {
    pub ft_disconnected: bool,
    pub forced_occlusion: [bool; 2],
}

/// How the arm is driven for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArmCommand {
    /// Joint velocities, rad/s.
    Velocity(Joints),
    /// Joint torques, N·m.
    Torque(Joints),
}

impl ArmCommand {
    pub fn zero_velocity() -> Self {
        ArmCommand::Velocity(Joints::zeros())
    }

    pub fn values(&self) -> &Joints {
        match self {
            ArmCommand::Velocity(v) | ArmCommand::Torque(v) => v,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values().iter().all(|c| *c == 0.0)
    }
}

/// Complete simulation truth at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub config: Arc<WorldConfig>,
    pub time: f64,
    pub tick: u64,
    pub arm: JointState,
    pub plate: Vec<FoodItem>,
    pub head_pose: Pose,
    pub utensil: UtensilState,
    pub food_on_fork: Option<FoodItem>,
    pub rng_seed: u64,
    pub faults: WorldFaults,
    pub user: UserState,
    /// Raw contact wrench at this state, before utensil transmission.
    pub contact: Wrench,
    /// Food items lost (dropped off a broken utensil).
    pub dropped: Vec<String>,
}

impl WorldState {
    pub fn new(
        config: WorldConfig,
        plate: Vec<FoodItem>,
        q0: Joints,
        rng_seed: u64,
    ) -> Result<Self, WorldError> {
        config.validate()?;
        config.arm.check_limits(&q0)?;
        for f in &plate {
            f.validate()?;
        }
        let utensil = UtensilState::new(config.sensors.breakaway_threshold);
        let config = Arc::new(config);
        let mut w = WorldState {
            head_pose: config.head.base_pose,
            config,
            time: 0.0,
            tick: 0,
            arm: JointState {
                angles: q0,
                ..Default::default()
            },
            plate,
            utensil,
            food_on_fork: None,
            rng_seed,
            faults: WorldFaults::default(),
            user: UserState::default(),
            contact: Wrench::zero(),
            dropped: Vec::new(),
        };
        w.head_pose = realized_head_pose(&w.config.head, w.time, rng_seed, 0);
        w.contact = sensors::contact_wrench(&w);
        Ok(w)
    }

    pub fn arm_model(&self) -> &ArmModel {
        &self.config.arm
    }

    pub fn tip_pose(&self) -> Pose {
        self.config.arm.tip_pose(&self.arm.angles)
    }

    pub fn flange_pose(&self) -> Pose {
        self.config.arm.flange_pose(&self.arm.angles)
    }

    pub fn food(&self, id: &str) -> Option<&FoodItem> {
        self.plate.iter().find(|f| f.id == id)
    }

    pub fn mouth_normal(&self) -> Vector3<f64> {
        self.head_pose.x_axis()
    }

    pub fn mouth_open(&self) -> bool {
        self.config.head.mouth_open.at(self.time)
    }

    pub fn talking(&self) -> bool {
        self.config.head.talking.at(self.time)
    }

    /// Move a plate item onto the fork (successful acquisition).
    pub fn attach_food(&mut self, id: &str) -> bool {
        if self.food_on_fork.is_some() || !self.utensil.intact {
            return false;
        }
        match self.plate.iter().position(|f| f.id == id) {
            Some(i) => {
                self.food_on_fork = Some(self.plate.remove(i));
                true
            }
            None => false,
        }
    }

    /// Force the user applies to the fork right now, world frame.
    pub fn user_force(&self) -> Vector3<f64> {
        let Some(since) = self.user.presented_since else {
            return Vector3::zeros();
        };
        let elapsed = self.time - since;
        let frame = self.config.head.base_pose.orientation;
        self.config
            .user
            .reactions
            .iter()
            .filter(|r| elapsed >= r.delay && elapsed < r.delay + r.duration)
            .filter(|r| !(r.kind == ReactionKind::Bite && self.user.bite_taken))
            .fold(Vector3::zeros(), |acc, r| {
                acc + frame * Vector3::from(r.force)
            })
    }
}

fn realized_head_pose(head: &HeadModel, t: f64, seed: u64, tick: u64) -> Pose {
    let mut p = head.noiseless_pose(t);
    p.position += noise::gaussian3(seed, tick, Stream::Head, head.noise_std);
    p
}

fn check_command(cmd: &ArmCommand) -> Result<(), WorldError> {
    match cmd.values().iter().position(|c| !c.is_finite()) {
        Some(i) => Err(WorldError::NonFiniteCommand(i)),
        None => Ok(()),
    }
}

/// Advance the world by `dt` under `commanded`.
///
/// Velocity mode integrates `q += v·dt` (velocities saturated at joint limits,
/// positions clipped to joint limits). Torque mode uses a first-order
/// response `v = (τ + Jᵀf_ext) / damping`, so contact forces push a compliant
/// arm.
pub fn step_world(
    w: &WorldState,
    commanded: &ArmCommand,
    dt: f64,
) -> Result<WorldState, WorldError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(WorldError::InvalidTimestep(dt));
    }
    check_command(commanded)?;
    let cfg = &w.config;
    let arm = &cfg.arm;
    let vel_lim = arm.velocity_limits();
    let (raw_v, torques) = match commanded {
        ArmCommand::Velocity(v) => (*v, Joints::zeros()),
        ArmCommand::Torque(tau) => {
            let tlim = arm.torque_limits();
            let tau = tau.zip_map(&tlim, |t, l| t.clamp(-l, l));
            let transmitted = sensors::transmitted(&w.utensil, w.time, &w.contact);
            let jac = arm.jacobian(&w.arm.angles);
            let ext = jac.fixed_rows::<3>(0).transpose() * transmitted.force;
            ((tau + ext) / cfg.torque_damping, tau)
        }
    };
    let v = raw_v.zip_map(&vel_lim, |v, l| v.clamp(-l, l));
    let q_free = w.arm.angles + v * dt;
    let q = arm.clamp_to_limits(&q_free);
    let velocities = Joints::from_fn(|i, _| {
        if q[i] != q_free[i] {
            (q[i] - w.arm.angles[i]) / dt
        } else {
            v[i]
        }
    });

    let mut next = w.clone();
    next.tick = w.tick + 1;
    next.time = w.time + dt;
    next.arm = JointState {
        angles: q,
        velocities,
        torques,
    };
    next.head_pose = realized_head_pose(&cfg.head, next.time, w.rng_seed, next.tick);
    update_user(&mut next);
    next.contact = sensors::contact_wrench(&next);
    next.utensil = sensors::update_utensil(&next.utensil, next.contact.force.norm(), next.time);
    if !next.utensil.intact {
        if let Some(food) = next.food_on_fork.take() {
            next.dropped.push(food.id);
        }
    }
    Ok(next)
}

fn update_user(w: &mut WorldState) {
    let tip = w.tip_pose().position;
    let near = (tip - w.head_pose.position).norm() <= w.config.user.presentation_radius;
    let tip_speed = (w.config.arm.jacobian(&w.arm.angles) * w.arm.velocities)
        .fixed_rows::<3>(0)
        .norm();
    let settled = tip_speed <= w.config.user.presentation_max_speed;
    match (near, w.user.presented_since) {
        (true, None) if settled => {
            w.user.presented_since = Some(w.time);
            w.user.bite_taken = false;
        }
        (false, Some(_)) => {
            w.user.presented_since = None;
        }
        _ => {}
    }
    let Some(since) = w.user.presented_since else {
        return;
    };
    if w.user.bite_taken {
        return;
    }
    let elapsed = w.time - since;
    let bite_done = w
        .config
        .user
        .reactions
        .iter()
        .any(|r| r.kind == ReactionKind::Bite && elapsed >= r.delay + r.duration);
    if bite_done {
        w.user.bite_taken = true;
        if let Some(food) = w.food_on_fork.take() {
            w.user.consumed.push(food.id);
        }
    }
}

/// Tool frame at a food item: x along the major axis projected onto the plate
/// plane, z up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoodFrame {
    pub pose: Pose,
    /// The major axis was (near) vertical and the plate x-axis was used.
    pub degenerate: bool,
}

pub fn food_frame(item: &FoodItem) -> FoodFrame {
    let a = item.major_axis;
    let horizontal = Vector3::new(a.x, a.y, 0.0);
    let (yaw, degenerate) = if horizontal.norm() < 1e-6 {
        log::warn!(
            "food {} major axis is vertical; using plate x-axis for its frame",
            item.id
        );
        (0.0, true)
    } else {
        (horizontal.y.atan2(horizontal.x), false)
    };
    FoodFrame {
        pose: Pose::new(
            item.pose.position,
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        ),
        degenerate,
    }
}

/// Approach parameters taken from an acquisition schema action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproachParams {
    /// Offset from the food frame, food-frame coordinates, meters.
    pub offset: Vector3<f64>,
    /// Rotation about the food-frame y-axis, radians.
    pub pitch: f64,
    /// Rotation about the (pitched) x-axis, radians.
    pub roll: f64,
}

pub const MAX_APPROACH_OFFSET: f64 = 0.3;

/// Food frame composed with the approach offset and orientation. The fork
/// points along the returned frame's x-axis.
pub fn approach_frame(food: &Pose, params: &ApproachParams) -> Result<Pose, WorldError> {
    let norm = params.offset.norm();
    if !(norm <= MAX_APPROACH_OFFSET) {
        return Err(WorldError::ApproachOffsetTooLarge(norm));
    }
    let offset = Pose::new(params.offset, UnitQuaternion::identity());
    let pitch = Pose::from_axis_angle(Vector3::y(), params.pitch);
    let roll = Pose::from_axis_angle(Vector3::x(), params.roll);
    Ok(food.compose(&offset).compose(&pitch).compose(&roll))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn item(axis: Vector3<f64>) -> FoodItem {
        FoodItem {
            id: "f".into(),
            food_class: "banana-slice".into(),
            pose: Pose::identity(),
            major_axis: axis,
            size: Vector3::new(0.03, 0.03, 0.015),
            resistance: 150.0,
            ground_truth_success: BTreeMap::new(),
        }
    }

    fn world() -> WorldState {
        let cfg = WorldConfig::reference();
        let rest = cfg.stations.rest;
        WorldState::new(cfg, Vec::new(), rest, 1).unwrap()
    }

    #[test]
    fn food_frame_along_x_is_identity() {
        let f = food_frame(&item(Vector3::x()));
        assert!(!f.degenerate);
        assert!(f.pose.orientation.angle() < 1e-12);
        assert!(f.pose.position.norm() < 1e-12);
    }

    #[test]
    fn food_frame_along_y_is_quarter_turn() {
        let f = food_frame(&item(Vector3::y()));
        let expect = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        assert!(f.pose.orientation.angle_to(&expect) < 1e-12);
    }

    #[test]
    fn vertical_axis_falls_back_to_plate_axes() {
        let f = food_frame(&item(Vector3::z()));
        assert!(f.degenerate);
        assert!(f.pose.orientation.angle() < 1e-12);
    }

    #[test]
    fn approach_identity_and_offset() {
        let food = Pose::from_translation(0.4, 0.3, 0.02);
        let zero = ApproachParams {
            offset: Vector3::zeros(),
            pitch: 0.0,
            roll: 0.0,
        };
        let a = approach_frame(&food, &zero).unwrap();
        assert_eq!(a.position, food.position);
        assert!(a.angle_to(&food) < 1e-12);
        let up = ApproachParams {
            offset: Vector3::new(0.0, 0.0, 0.05),
            ..zero
        };
        let a = approach_frame(&food, &up).unwrap();
        assert!((a.position - food.position - Vector3::new(0.0, 0.0, 0.05)).norm() < 1e-12);
        let far = ApproachParams {
            offset: Vector3::new(0.0, 0.0, 0.31),
            ..zero
        };
        assert!(matches!(
            approach_frame(&food, &far),
            Err(WorldError::ApproachOffsetTooLarge(_))
        ));
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let w = world();
        assert_eq!(
            step_world(&w, &ArmCommand::zero_velocity(), 0.0),
            Err(WorldError::InvalidTimestep(0.0))
        );
        assert!(step_world(&w, &ArmCommand::zero_velocity(), 0.2).is_err());
        let mut v = Joints::zeros();
        v[2] = f64::NAN;
        assert_eq!(
            step_world(&w, &ArmCommand::Velocity(v), 0.01),
            Err(WorldError::NonFiniteCommand(2))
        );
    }

    #[test]
    fn zero_command_leaves_arm_and_follows_sinusoid() {
        let mut cfg = WorldConfig::reference();
        cfg.head.voluntary = vec![Sinusoid {
            amplitude: [0.01, 0.0, 0.005],
            frequency_hz: 0.5,
            phase: 0.3,
        }];
        let rest = cfg.stations.rest;
        let base = cfg.head.base_pose.position;
        let head = cfg.head.clone();
        let mut w = WorldState::new(cfg, Vec::new(), rest, 9).unwrap();
        for _ in 0..150 {
            w = step_world(&w, &ArmCommand::zero_velocity(), CONTROL_DT).unwrap();
            assert_eq!(w.arm.angles, rest);
            let expect = base + head.voluntary_offset(w.time);
            assert!((w.head_pose.position - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn spasm_jumps_then_decays() {
        let mut cfg = WorldConfig::reference();
        cfg.head.spasm_schedule = vec![Spasm {
            time: 1.0,
            displacement: [0.05, 0.0, 0.0],
            decay: 4.0,
        }];
        let base = cfg.head.base_pose.position.x;
        let head = cfg.head.clone();
        assert_eq!(head.spasm_offset(0.999).x, 0.0);
        assert!((head.spasm_offset(1.0).x - 0.05).abs() < 1e-15);
        let later = head.spasm_offset(1.5).x;
        assert!((later - 0.05 * (-2.0f64).exp()).abs() < 1e-15);
        let rest = cfg.stations.rest;
        let mut w = WorldState::new(cfg, Vec::new(), rest, 2).unwrap();
        let mut jumped = false;
        while w.time < 1.2 {
            let before = w.head_pose.position.x - base;
            w = step_world(&w, &ArmCommand::zero_velocity(), CONTROL_DT).unwrap();
            let after = w.head_pose.position.x - base;
            if after - before > 0.04 {
                jumped = true;
                assert!(w.time >= 1.0 - 1e-9);
            }
        }
        assert!(jumped);
    }

    #[test]
    fn velocity_mode_clips_at_limits() {
        let w = world();
        let mut v = Joints::zeros();
        v[1] = 1.0;
        let mut s = w.clone();
        for _ in 0..1000 {
            s = step_world(&s, &ArmCommand::Velocity(v), 0.05).unwrap();
        }
        let hi = s.arm_model().links[1].limits[1];
        assert_eq!(s.arm.angles[1], hi);
        assert_eq!(s.arm.velocities[1], 0.0);
    }

    #[test]
    fn bool_signal_toggles() {
        let s = BoolSignal {
            initial: true,
            toggles: vec![1.0, 2.0],
        };
        assert!(s.at(0.5));
        assert!(!s.at(1.0));
        assert!(!s.at(1.5));
        assert!(s.at(2.5));
    }

    #[test]
    fn reference_stations_hit_their_targets() {
        let cfg = WorldConfig::reference();
        let above = cfg.arm.tip_pose(&cfg.stations.above_plate);
        let target = cfg.plate.center + Vector3::new(0.0, 0.0, ABOVE_PLATE_HEIGHT);
        assert!((above.position - target).norm() < 1e-4);
        let staging = cfg.arm.tip_pose(&cfg.stations.staging);
        let n = cfg.head.mouth_normal();
        let target = cfg.head.base_pose.position + n * STAGING_DISTANCE;
        assert!((staging.position - target).norm() < 1e-4);
        assert!((staging.z_axis() + n).norm() < 1e-3);
    }
}
