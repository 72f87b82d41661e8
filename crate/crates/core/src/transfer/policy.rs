//! Transfer phase machine: staging, readiness wait, mouth approach, hand-off
//! and retraction along the recorded approach path.

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::classify::InteractionClass;
use super::fusion::MouthEstimate;
use super::readiness::ReadinessState;
use crate::control::{
    retime_trajectory, ControlIntent, GateConfig, ImpedanceGains, JointLimits, TimedTrajectory,
    DEFAULT_ACCELERATION,
};
use crate::world::kinematics::{dls_step, pose_error, tool_orientation, ArmModel};
use crate::world::{Joints, Pose, CONTROL_DT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    #[default]
    OutsideMouth,
    InMouth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub mode: TransferMode,
    /// Hand-off distance in front of the mouth along its normal, meters.
    pub outside_distance: f64,
    /// In (0, 1].
    pub speed_scale: f64,
    pub bite_threshold: f64,
    pub spasm_threshold: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            mode: TransferMode::OutsideMouth,
            outside_distance: 0.05,
            speed_scale: 1.0,
            bite_threshold: 1.0,
            spasm_threshold: super::spasm::DEFAULT_SPASM_THRESHOLD,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.outside_distance >= 0.0 && self.outside_distance.is_finite()) {
            return Err(format!(
                "outside_distance {} must be >= 0",
                self.outside_distance
            ));
        }
        if !(self.speed_scale > 0.0 && self.speed_scale <= 1.0) {
            return Err(format!(
                "speed_scale {} must be in (0, 1]",
                self.speed_scale
            ));
        }
        if !(self.bite_threshold > 0.0 && self.spasm_threshold > 0.0) {
            return Err("thresholds must be > 0".into());
        }
        Ok(())
    }
}

/// Cartesian approach speed at full speed scale, m/s.
pub const APPROACH_SPEED: f64 = 0.08;
pub const MAX_ANGULAR_SPEED: f64 = 0.6;
const SERVO_GAIN: f64 = 2.0;
const SERVO_DAMPING: f64 = 0.02;
/// Depth past the mouth opening for in-mouth transfer, meters.
pub const IN_MOUTH_DEPTH: f64 = 0.02;
pub const ARRIVAL_TOLERANCE: f64 = 0.005;
/// Quiet time after the last involuntary interaction before moving again.
pub const STILLNESS_PERIOD: f64 = 0.5;
/// Hand-off is abandoned when no bite arrives within this time.
pub const BITE_TIMEOUT: f64 = 20.0;
/// Approach configurations are recorded each time the tip moves this far.
const RECORD_SPACING: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferPhase {
    ApproachStaging,
    WaitReady,
    ApproachMouth,
    InMouth,
    Retract,
    Done,
    Aborted,
}

impl TransferPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, TransferPhase::Done | TransferPhase::Aborted)
    }
}

/// Joint-level command for one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyCommand {
    /// Stay put with the active controller.
    Hold,
    /// Hold compliantly at a fixed configuration.
    ComplyAt(Joints),
    /// Gated joint velocity.
    Servo(Joints),
    /// Compliant control toward a moving configuration.
    ComplyTrack(Joints),
    /// Gated trajectory reference.
    Track { q_ref: Joints, v_ref: Joints },
    /// Terminal stop after a shutdown.
    Stop,
}

impl PolicyCommand {
    /// Whether this command can move the arm of its own accord.
    pub fn is_motion(&self) -> bool {
        matches!(
            self,
            PolicyCommand::Servo(_) | PolicyCommand::ComplyTrack(_) | PolicyCommand::Track { .. }
        )
    }

    pub fn intent(&self, gate: GateConfig, gains: ImpedanceGains) -> ControlIntent {
        match *self {
            PolicyCommand::Hold | PolicyCommand::Stop => ControlIntent::Hold,
            PolicyCommand::ComplyAt(q) | PolicyCommand::ComplyTrack(q) => {
                ControlIntent::Compliant {
                    target_q: q,
                    target_v: Joints::zeros(),
                    gains,
                }
            }
            PolicyCommand::Servo(v) => ControlIntent::Velocity { v, gate },
            PolicyCommand::Track { q_ref, v_ref } => {
                ControlIntent::Trajectory { q_ref, v_ref, gate }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PolicyInputs<'a> {
    pub now: f64,
    pub q: Joints,
    /// Latest filtered mouth estimate, if any.
    pub mouth: Option<&'a MouthEstimate>,
    pub readiness: ReadinessState,
    pub interaction: Option<InteractionClass>,
    pub shutdown: bool,
    pub gate_aborted: bool,
}

/// Tip target for a mouth estimate: in front of the mouth along its normal
/// (or inside it), pointing back along the normal with the tines level.
pub fn transfer_target(mouth: &Pose, cfg: &TransferConfig) -> Pose {
    let n = mouth.x_axis();
    let offset = match cfg.mode {
        TransferMode::OutsideMouth => cfg.outside_distance,
        TransferMode::InMouth => -IN_MOUTH_DEPTH,
    };
    Pose::new(
        mouth.position + n * offset,
        tool_orientation(&-n, &Vector3::z()),
    )
}

/// Joint velocity that drives the tip toward `target` at no more than
/// `speed` m/s, scaled down uniformly to respect the velocity limits.
pub fn servo_velocity(arm: &ArmModel, q: &Joints, target: &Pose, speed: f64) -> Joints {
    let e = pose_error(&arm.tip_pose(q), target);
    let mut lin = e.fixed_rows::<3>(0) * SERVO_GAIN;
    let mut ang = e.fixed_rows::<3>(3) * SERVO_GAIN;
    if lin.norm() > speed {
        lin *= speed / lin.norm();
    }
    if ang.norm() > MAX_ANGULAR_SPEED {
        ang *= MAX_ANGULAR_SPEED / ang.norm();
    }
    let twist = Vector6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z);
    let v = dls_step(&arm.jacobian(q), &twist, SERVO_DAMPING);
    let limits = arm.velocity_limits();
    let ratio = v.zip_map(&limits, |a, l| a.abs() / l).max();
    if ratio > 1.0 {
        v / ratio
    } else {
        v
    }
}

#[derive(Debug, Clone)]
struct RetractState {
    trajectory: TimedTrajectory,
    clock: f64,
}

#[derive(Debug, Clone)]
pub struct TransferPolicy {
    pub config: TransferConfig,
    arm: ArmModel,
    staging: Pose,
    phase: TransferPhase,
    path: Vec<Joints>,
    last_recorded_tip: Option<Vector3<f64>>,
    hold_anchor: Option<Joints>,
    last_involuntary: Option<f64>,
    in_mouth_since: Option<f64>,
    in_mouth_q: Option<Joints>,
    retract: Option<RetractState>,
    bite_detected: bool,
    /// The previous tick was classified Involuntary.
    involuntary_last_tick: bool,
    /// A bite arrived on a tick that had to hold; it retracts on the next.
    bite_pending: bool,
}

impl TransferPolicy {
    pub fn new(config: TransferConfig, arm: ArmModel, staging: Pose) -> Self {
        Self {
            config,
            arm,
            staging,
            phase: TransferPhase::ApproachStaging,
            path: Vec::new(),
            last_recorded_tip: None,
            hold_anchor: None,
            last_involuntary: None,
            in_mouth_since: None,
            in_mouth_q: None,
            retract: None,
            bite_detected: false,
            involuntary_last_tick: false,
            bite_pending: false,
        }
    }

    pub fn phase(&self) -> TransferPhase {
        self.phase
    }

    /// An intentional bite was classified during this transfer.
    pub fn bite_detected(&self) -> bool {
        self.bite_detected
    }

    pub fn recorded_path(&self) -> &[Joints] {
        &self.path
    }

    fn speed(&self) -> f64 {
        APPROACH_SPEED * self.config.speed_scale
    }

    fn record(&mut self, q: &Joints) {
        let tip = self.arm.tip_pose(q).position;
        if self
            .last_recorded_tip
            .is_none_or(|p| (p - tip).norm() >= RECORD_SPACING)
        {
            self.path.push(*q);
            self.last_recorded_tip = Some(tip);
        }
    }

    fn begin_retract(&mut self, q: &Joints) {
        let mut waypoints = vec![*q];
        waypoints.extend(self.path.iter().rev().copied());
        let limits = JointLimits::new(
            self.arm.velocity_limits(),
            Joints::repeat(DEFAULT_ACCELERATION),
        );
        self.retract = retime_trajectory(&waypoints, &limits, self.config.speed_scale)
            .ok()
            .map(|trajectory| RetractState {
                trajectory,
                clock: 0.0,
            });
        self.phase = TransferPhase::Retract;
    }

    /// Advance the phase machine by one tick.
    pub fn step(&mut self, inp: &PolicyInputs<'_>) -> PolicyCommand {
        if self.phase.is_terminal() {
            return if self.phase == TransferPhase::Aborted {
                PolicyCommand::Stop
            } else {
                PolicyCommand::Hold
            };
        }
        if inp.shutdown {
            self.phase = TransferPhase::Aborted;
            return PolicyCommand::Stop;
        }
        if inp.gate_aborted {
            self.phase = TransferPhase::Aborted;
            return PolicyCommand::Hold;
        }
        let involuntary = inp.interaction == Some(InteractionClass::Involuntary);
        let after_involuntary = std::mem::replace(&mut self.involuntary_last_tick, involuntary);
        if involuntary {
            self.last_involuntary = Some(inp.now);
        }
        let bite = self.phase == TransferPhase::InMouth
            && (self.bite_pending || inp.interaction == Some(InteractionClass::IntentionalBite));
        let still = self
            .last_involuntary
            .is_some_and(|t| inp.now - t < STILLNESS_PERIOD - 1e-9);
        // A bite cuts the stillness hold short, except on the tick right after
        // an involuntary classification.
        if still && !(bite && !involuntary && !after_involuntary) {
            self.bite_pending = bite;
            let anchor = *self.hold_anchor.get_or_insert(inp.q);
            return PolicyCommand::ComplyAt(anchor);
        }
        self.bite_pending = false;
        self.hold_anchor = None;
        match self.phase {
            TransferPhase::ApproachStaging => {
                let tip = self.arm.tip_pose(&inp.q);
                if (tip.position - self.staging.position).norm() <= ARRIVAL_TOLERANCE {
                    self.phase = TransferPhase::WaitReady;
                    return PolicyCommand::Hold;
                }
                PolicyCommand::Servo(servo_velocity(
                    &self.arm,
                    &inp.q,
                    &self.staging,
                    self.speed(),
                ))
            }
            TransferPhase::WaitReady => {
                if inp.readiness.is_ready() && inp.mouth.is_some() {
                    self.phase = TransferPhase::ApproachMouth;
                    self.record(&inp.q);
                }
                PolicyCommand::Hold
            }
            TransferPhase::ApproachMouth => {
                let Some(mouth) = inp.mouth.filter(|_| inp.readiness.is_ready()) else {
                    return PolicyCommand::Hold;
                };
                let target = transfer_target(&mouth.pose, &self.config);
                let tip = self.arm.tip_pose(&inp.q);
                self.record(&inp.q);
                if (tip.position - target.position).norm() <= ARRIVAL_TOLERANCE {
                    self.phase = TransferPhase::InMouth;
                    self.in_mouth_since = Some(inp.now);
                    self.in_mouth_q = Some(inp.q);
                    return PolicyCommand::ComplyAt(inp.q);
                }
                PolicyCommand::Servo(servo_velocity(&self.arm, &inp.q, &target, self.speed()))
            }
            TransferPhase::InMouth => {
                if bite {
                    self.bite_detected = true;
                    self.begin_retract(&inp.q);
                    return self.step_retract(&inp.q);
                }
                if inp.interaction == Some(InteractionClass::InMouthManipulation) {
                    return PolicyCommand::ComplyAt(inp.q);
                }
                if self
                    .in_mouth_since
                    .is_some_and(|t| inp.now - t >= BITE_TIMEOUT)
                {
                    log::warn!("no bite within {BITE_TIMEOUT} s; retracting");
                    self.begin_retract(&inp.q);
                    return self.step_retract(&inp.q);
                }
                let anchor = self.in_mouth_q.unwrap_or(inp.q);
                let next = match inp.mouth {
                    Some(m) => {
                        let target = transfer_target(&m.pose, &self.config);
                        let dq = servo_velocity(&self.arm, &anchor, &target, self.speed());
                        self.arm.clamp_to_limits(&(anchor + dq * CONTROL_DT))
                    }
                    None => anchor,
                };
                self.in_mouth_q = Some(next);
                PolicyCommand::ComplyTrack(next)
            }
            TransferPhase::Retract => self.step_retract(&inp.q),
            TransferPhase::Done | TransferPhase::Aborted => unreachable!("handled above"),
        }
    }

    fn step_retract(&mut self, q: &Joints) -> PolicyCommand {
        let Some(r) = self.retract.as_mut() else {
            self.phase = TransferPhase::Done;
            return PolicyCommand::Hold;
        };
        if r.clock >= r.trajectory.duration() {
            let done = (q - r.trajectory.final_q()).amax() < 1e-2;
            if done {
                self.phase = TransferPhase::Done;
                return PolicyCommand::Hold;
            }
        }
        let (q_ref, v_ref) = r.trajectory.sample(r.clock);
        r.clock += CONTROL_DT;
        PolicyCommand::Track { q_ref, v_ref }
    }
}
