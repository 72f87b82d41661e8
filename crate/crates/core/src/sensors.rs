//! Simulated wrist force/torque sensor, breakaway utensil and in-hand cameras.
//!
//! All functions here are pure in the world snapshot. Wrenches are expressed
//! in the world frame; the sensor torque is taken about the flange origin.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::noise::{self, Stream};
use crate::world::pose::vec3_serde;
use crate::world::{Pose, WorldState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SensorError {
    #[error("force/torque sensor disconnected")]
    Disconnected,
    #[error("unknown camera {0}")]
    UnknownCamera(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraMount {
    /// Camera center in the flange frame, meters.
    #[serde(with = "vec3_serde")]
    pub position: Vector3<f64>,
}

impl CameraMount {
    /// Mount at `radius` from the tool axis, `yaw` radians from flange +x,
    /// `height` along the tool axis.
    pub fn on_wrist(radius: f64, yaw: f64, height: f64) -> Self {
        Self {
            position: Vector3::new(radius * yaw.cos(), radius * yaw.sin(), height),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    /// Per-axis force noise, N.
    pub force_sigma: f64,
    /// Per-axis torque noise, N·m.
    pub torque_sigma: f64,
    pub breakaway_threshold: f64,
    /// Per-axis camera position noise, meters.
    pub camera_sigma: f64,
    pub occlusion_half_angle_deg: f64,
    /// Fork points this close to the mouth hide only part of the face and
    /// do not occlude it.
    pub occlusion_exclusion_radius: f64,
    /// Confidence decays as `exp(-distance / confidence_length)`.
    pub confidence_length: f64,
    pub cameras: [CameraMount; 2],
}

impl Default for SensorConfig {
    fn default() -> Self {
        let yaw = 30f64.to_radians();
        Self {
            force_sigma: 0.05,
            torque_sigma: 0.005,
            breakaway_threshold: 15.0,
            camera_sigma: 0.003,
            occlusion_half_angle_deg: 10.0,
            occlusion_exclusion_radius: 0.03,
            confidence_length: 0.5,
            cameras: [
                CameraMount::on_wrist(0.10, yaw, 0.10),
                CameraMount::on_wrist(0.10, -yaw, 0.10),
            ],
        }
    }
}

impl SensorConfig {
    /// Noise-free sensing, otherwise default geometry.
    pub fn noiseless() -> Self {
        Self {
            force_sigma: 0.0,
            torque_sigma: 0.0,
            camera_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.breakaway_threshold > 0.0 && self.breakaway_threshold.is_finite()) {
            return Err("breakaway_threshold must be > 0".into());
        }
        if !(self.force_sigma >= 0.0 && self.torque_sigma >= 0.0 && self.camera_sigma >= 0.0) {
            return Err("noise sigmas must be >= 0".into());
        }
        if !(self.occlusion_half_angle_deg > 0.0 && self.occlusion_half_angle_deg < 90.0) {
            return Err("occlusion_half_angle_deg must be in (0, 90)".into());
        }
        if !(self.occlusion_exclusion_radius >= 0.0) {
            return Err("occlusion_exclusion_radius must be >= 0".into());
        }
        if !(self.confidence_length > 0.0) {
            return Err("confidence_length must be > 0".into());
        }
        Ok(())
    }
}

/// Force on the fork and torque about a reference point, world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn zero() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceTorqueReading {
    #[serde(rename = "f", with = "vec3_serde")]
    pub force: Vector3<f64>,
    #[serde(rename = "tau", with = "vec3_serde")]
    pub torque: Vector3<f64>,
    #[serde(rename = "t")]
    pub timestamp: f64,
    pub seq: u64,
}

impl ForceTorqueReading {
    pub fn force_norm(&self) -> f64 {
        self.force.norm()
    }

    pub fn torque_norm(&self) -> f64 {
        self.torque.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorHealth {
    pub connected: bool,
    pub last_reading_time: f64,
}

impl Default for SensorHealth {
    fn default() -> Self {
        Self {
            connected: false,
            last_reading_time: f64::NEG_INFINITY,
        }
    }
}

impl SensorHealth {
    pub fn record(&mut self, reading: &ForceTorqueReading) {
        self.connected = true;
        self.last_reading_time = reading.timestamp;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtensilState {
    pub intact: bool,
    pub breakaway_threshold: f64,
    pub break_time: Option<f64>,
}

impl UtensilState {
    pub fn new(breakaway_threshold: f64) -> Self {
        Self {
            intact: true,
            breakaway_threshold,
            break_time: None,
        }
    }
}

/// Latch the utensil broken on the first force strictly above threshold.
pub fn update_utensil(u: &UtensilState, tip_force: f64, t: f64) -> UtensilState {
    if u.intact && tip_force > u.breakaway_threshold {
        UtensilState {
            intact: false,
            break_time: Some(t),
            ..*u
        }
    } else {
        *u
    }
}

/// Wrench that reaches the sensor. After the break the tip is gone, so only
/// the breaking sample itself still carries contact force.
pub fn transmitted(u: &UtensilState, t: f64, contact: &Wrench) -> Wrench {
    if u.intact || u.break_time == Some(t) {
        *contact
    } else {
        Wrench::zero()
    }
}

/// Raw contact wrench at the fork tip for the current arm pose: food, plate,
/// obstacles, face and the user's own push. Linear springs on penetration
/// depth; torque about the tip is zero for these point contacts.
pub fn contact_wrench(w: &WorldState) -> Wrench {
    let tip = w.tip_pose().position;
    let cfg = &w.config;
    let mut f = Vector3::zeros();

    let plate = &cfg.plate;
    let radial = Vector3::new(tip.x - plate.center.x, tip.y - plate.center.y, 0.0).norm();
    if radial <= plate.radius && tip.z < plate.center.z {
        f.z += plate.stiffness * (plate.center.z - tip.z);
    }

    for item in &w.plate {
        let local = item.pose.inverse().transform_point(&tip);
        let half = item.size * 0.5;
        if local.x.abs() <= half.x && local.y.abs() <= half.y && local.z < half.z {
            let depth = (half.z - local.z).min(item.size.z);
            f.z += item.resistance * depth;
        }
    }

    for ob in &cfg.obstacles {
        let d = tip - ob.center;
        let dist = d.norm();
        if dist < ob.radius && dist > 1e-12 {
            f += d / dist * ob.stiffness * (ob.radius - dist);
        }
    }

    f += face_contact(w, &tip);
    f += w.user_force();
    Wrench {
        force: f,
        torque: Vector3::zeros(),
    }
}

fn face_contact(w: &WorldState, tip: &Vector3<f64>) -> Vector3<f64> {
    let g = &w.config.head.mouth;
    let p = w.head_pose.inverse().transform_point(tip);
    let rho = (p.y * p.y + p.z * p.z).sqrt();
    if p.x >= 0.0 || rho >= g.face_radius {
        return Vector3::zeros();
    }
    let inside_opening = rho < g.opening_radius && w.mouth_open();
    let depth = if inside_opening {
        (-p.x - g.cavity_depth).max(0.0)
    } else {
        -p.x
    };
    w.head_pose.x_axis() * g.tissue_stiffness * depth
}

/// Sample the wrist sensor. Torque is about the flange origin.
pub fn read_force_torque(
    w: &WorldState,
    health: &SensorHealth,
) -> Result<ForceTorqueReading, SensorError> {
    if !health.connected {
        return Err(SensorError::Disconnected);
    }
    let s = &w.config.sensors;
    let wr = transmitted(&w.utensil, w.time, &w.contact);
    let lever = w.tip_pose().position - w.flange_pose().position;
    let (nf, nt) = noise::gaussian3x2(
        w.rng_seed,
        w.tick,
        Stream::ForceTorque,
        s.force_sigma,
        s.torque_sigma,
    );
    Ok(ForceTorqueReading {
        force: wr.force + nf,
        torque: wr.torque + lever.cross(&wr.force) + nt,
        timestamp: w.time,
        seq: w.tick,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraObservation {
    pub camera_id: u8,
    pub mouth_pose_estimate: Option<Pose>,
    pub confidence: f64,
    pub occluded: bool,
    pub timestamp: f64,
}

/// World position of a camera.
pub fn camera_position(w: &WorldState, camera_id: u8) -> Result<Vector3<f64>, SensorError> {
    let mount = w
        .config
        .sensors
        .cameras
        .get(camera_id as usize)
        .ok_or(SensorError::UnknownCamera(camera_id))?;
    Ok(w.flange_pose().transform_point(&mount.position))
}

/// Smallest angle between `target - cam` and any point of segment `a..b`
/// that lies closer to the camera than the target and at least `exclusion`
/// away from it.
fn min_sight_angle(
    cam: &Vector3<f64>,
    target: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    exclusion: f64,
) -> f64 {
    let sight = target - cam;
    let range = sight.norm();
    let angle_at = |s: f64| -> f64 {
        let p = a + (b - a) * s;
        let d = p - cam;
        let n = d.norm();
        if n < 1e-12 || n > range || (p - target).norm() < exclusion {
            return std::f64::consts::PI;
        }
        (d.dot(&sight) / (n * range)).clamp(-1.0, 1.0).acos()
    };
    const SAMPLES: usize = 32;
    let (mut best_s, mut best) = (0.0, f64::INFINITY);
    for i in 0..=SAMPLES {
        let s = i as f64 / SAMPLES as f64;
        let v = angle_at(s);
        if v < best {
            best = v;
            best_s = s;
        }
    }
    let step = 1.0 / SAMPLES as f64;
    let (mut lo, mut hi) = ((best_s - step).max(0.0), (best_s + step).min(1.0));
    for _ in 0..40 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if angle_at(m1) <= angle_at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    best.min(angle_at(0.5 * (lo + hi)))
}

/// Whether the fork (flange to tip segment) blocks this camera's view of the
/// mouth, ignoring forced faults.
pub fn fork_occludes(w: &WorldState, camera_id: u8) -> Result<bool, SensorError> {
    let cam = camera_position(w, camera_id)?;
    let mouth = w.head_pose.position;
    let half = w.config.sensors.occlusion_half_angle_deg.to_radians();
    let a = w.flange_pose().position;
    let b = w.tip_pose().position;
    let exclusion = w.config.sensors.occlusion_exclusion_radius;
    Ok(min_sight_angle(&cam, &mouth, &a, &b, exclusion) < half)
}

pub fn observe_mouth(w: &WorldState, camera_id: u8) -> Result<CameraObservation, SensorError> {
    let cam = camera_position(w, camera_id)?;
    let forced = w.faults.forced_occlusion[camera_id as usize];
    let occluded = forced || fork_occludes(w, camera_id)?;
    if occluded {
        return Ok(CameraObservation {
            camera_id,
            mouth_pose_estimate: None,
            confidence: 0.0,
            occluded: true,
            timestamp: w.time,
        });
    }
    let s = &w.config.sensors;
    let stream = if camera_id == 0 {
        Stream::Camera0
    } else {
        Stream::Camera1
    };
    let mut estimate = w.head_pose;
    estimate.position += noise::gaussian3(w.rng_seed, w.tick, stream, s.camera_sigma);
    let distance = (w.head_pose.position - cam).norm();
    Ok(CameraObservation {
        camera_id,
        mouth_pose_estimate: Some(estimate),
        confidence: (-distance / s.confidence_length).exp(),
        occluded: false,
        timestamp: w.time,
    })
}

pub fn observe_both(w: &WorldState) -> [CameraObservation; 2] {
    [0u8, 1].map(|id| observe_mouth(w, id).expect("camera ids 0 and 1 exist"))
}
