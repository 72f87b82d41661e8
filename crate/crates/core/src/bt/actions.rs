//! Leaf behaviors of the feeding trees.

use nalgebra::{Vector3, Vector6};
use rand::Rng;
use serde::Deserialize;

use super::{
    BbValue, Behavior, Blackboard, BtError, FailureReason, NodeStatus, Predicate, Registry,
    TickContext, TickInputs, TraceEvent, WorldEffect,
};
use crate::acquire::motion::{SchemaMotion, SchemaPhase};
use crate::control::{
    retime_trajectory, ControlIntent, ImpedanceGains, JointLimits, TimedTrajectory,
    DEFAULT_ACCELERATION,
};
use crate::safety::GuardState;
use crate::transfer::policy::APPROACH_SPEED;
use crate::transfer::{
    classify_interaction, servo_velocity, ClassifierConfig, ClassifierInput, TransferPhase,
    TransferPolicy,
};
use crate::world::kinematics::{dls_step, pose_error, solve_ik, ArmModel, IkOptions};
use crate::world::noise::{rng_for, Stream};
use crate::world::{Joints, Pose, WorldState};

pub fn register_all(r: &mut Registry) {
    r.register_action("move_to_configuration", |p| {
        Ok(Box::new(MoveToConfiguration::new(parse(p, "move_to_configuration")?)))
    });
    r.register_action("compute_frames", |p| {
        Ok(Box::new(ComputeFrames {
            args: parse(p, "compute_frames")?,
        }))
    });
    r.register_action("schema_segment", |p| {
        let args: SegmentArgs = parse(p, "schema_segment")?;
        Ok(Box::new(SchemaSegment::new(args.segment)))
    });
    r.register_action("transfer", |_| Ok(Box::new(Transfer::default())));
    r.register_action("retract_to_staging", |_| Ok(Box::new(RetractToStaging)));
    r.register_condition("food_on_fork", |_| Ok(Box::new(FoodOnFork)));
    r.register_condition("guard_run", |_| Ok(Box::new(GuardRun)));
}

fn parse<T: for<'de> Deserialize<'de>>(p: &serde_json::Value, binding: &str) -> Result<T, BtError> {
    serde_json::from_value(p.clone()).map_err(|e| BtError::InvalidParams {
        binding: binding.into(),
        reason: e.to_string(),
    })
}

/// Shutdown or a gate abort on the previous tick ends any moving behavior.
fn safety_check(ctx: &TickContext<'_, '_>) -> Option<FailureReason> {
    if ctx.inputs.guard == GuardState::Shutdown {
        return Some(FailureReason::SafetyShutdown);
    }
    ctx.inputs.gate_abort()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    Station(String),
    Blackboard(String),
    Joints([f64; 6]),
}

fn resolve_target(spec: &TargetSpec, w: &WorldState, bb: &Blackboard) -> Result<Joints, String> {
    let s = &w.config.stations;
    match spec {
        TargetSpec::Station(name) => match name.as_str() {
            "rest" => Ok(s.rest),
            "above_plate" => Ok(s.above_plate),
            "staging" => Ok(s.staging),
            other => Err(format!("unknown station {other:?}")),
        },
        TargetSpec::Blackboard(key) => bb
            .joints(key)
            .ok_or_else(|| format!("blackboard has no joints under {key:?}")),
        TargetSpec::Joints(q) => Ok(Joints::from_row_slice(q)),
    }
}

/// Clearance kept from the plate surface and the head sphere, meters.
pub const COLLISION_MARGIN: f64 = 0.01;
/// The head is a sphere of this radius whose surface passes through the mouth.
pub const HEAD_RADIUS: f64 = 0.10;
const PATH_STEP: f64 = 0.02;

/// Check tip and flange along the straight joint path against the plate
/// and the head. An obstacle that already contains either endpoint is
/// ignored so that moves out of contact stay possible.
pub fn check_joint_path(w: &WorldState, from: &Joints, to: &Joints) -> Result<(), String> {
    let arm = &w.config.arm;
    let head_center = w.head_pose.position - w.mouth_normal() * HEAD_RADIUS;
    let plate = &w.config.plate;
    let in_head = |p: &Vector3<f64>| (p - head_center).norm() < HEAD_RADIUS + COLLISION_MARGIN;
    let in_plate = |p: &Vector3<f64>| {
        let radial = Vector3::new(p.x - plate.center.x, p.y - plate.center.y, 0.0).norm();
        radial <= plate.radius && p.z < plate.center.z + COLLISION_MARGIN * 0.5
    };
    let points = |q: &Joints| [arm.tip_pose(q).position, arm.flange_pose(q).position];
    let ends = [points(from), points(to)];
    let head_exempt = ends.iter().flatten().any(|p| in_head(p));
    let plate_exempt = ends.iter().flatten().any(|p| in_plate(p));
    let n = (((to - from).amax() / PATH_STEP).ceil() as usize).max(1);
    for k in 0..=n {
        let q = from + (to - from) * (k as f64 / n as f64);
        for p in points(&q) {
            if !head_exempt && in_head(&p) {
                return Err(format!("path enters the head region at step {k}"));
            }
            if !plate_exempt && in_plate(&p) {
                return Err(format!("path enters the plate at step {k}"));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
pub struct MoveArgs {
    pub target: TargetSpec,
}

/// Joint-space interpolation to a target, retimed and tracked under the gate.
pub struct MoveToConfiguration {
    args: MoveArgs,
    run: Option<(TimedTrajectory, f64, Joints)>,
}

/// Joint error (rad) at which a move counts as arrived.
pub const ARRIVAL_JOINT_TOLERANCE: f64 = 2e-3;
/// Extra time allowed after the trajectory ends before a move fails.
const SETTLE_TIME: f64 = 3.0;

impl MoveToConfiguration {
    pub fn new(args: MoveArgs) -> Self {
        Self { args, run: None }
    }
}

impl Behavior for MoveToConfiguration {
    fn tick(&mut self, ctx: &mut TickContext<'_, '_>) -> NodeStatus {
        if let Some(r) = safety_check(ctx) {
            return ctx.fail(r);
        }
        let w = ctx.inputs.world;
        let q = w.arm.angles;
        if self.run.is_none() {
            let target = match resolve_target(&self.args.target, w, ctx.blackboard) {
                Ok(t) => t,
                Err(detail) => return ctx.fail(FailureReason::PlanningFailed { detail }),
            };
            if (target - q).amax() <= ARRIVAL_JOINT_TOLERANCE {
                return NodeStatus::Success;
            }
            if let Err(detail) = check_joint_path(w, &q, &target) {
                return ctx.fail(FailureReason::PlanningFailed { detail });
            }
            let limits = JointLimits::new(
                w.config.arm.velocity_limits(),
                Joints::repeat(DEFAULT_ACCELERATION),
            );
            match retime_trajectory(&[q, target], &limits, ctx.inputs.params.speed_scale) {
                Ok(traj) => self.run = Some((traj, 0.0, target)),
                Err(e) => {
                    return ctx.fail(FailureReason::PlanningFailed {
                        detail: e.to_string(),
                    })
                }
            }
        }
        let (traj, clock, target) = self.run.as_mut().expect("planned above");
        if *clock >= traj.duration() && (*target - q).amax() <= ARRIVAL_JOINT_TOLERANCE {
            return NodeStatus::Success;
        }
        if *clock > traj.duration() + SETTLE_TIME {
            return ctx.fail(FailureReason::ActionFailed {
                detail: "move did not settle on its target".into(),
            });
        }
        let (q_ref, v_ref) = traj.sample(*clock);
        *clock += ctx.inputs.dt;
        let gate = ctx.gate;
        ctx.command(ControlIntent::Trajectory { q_ref, v_ref, gate });
        NodeStatus::Running
    }

    fn reset(&mut self) {
        self.run = None;
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct FrameArgs {
    pub food_id: String,
    pub action_index: usize,
}

/// Look up the food and the library action, pick the reachable approach
/// orientation and store the approach configuration.
pub struct ComputeFrames {
    args: FrameArgs,
}

pub fn plan_schema(
    w: &WorldState,
    food_id: &str,
    action: &crate::acquire::SchemaAction,
) -> Result<(SchemaMotion, bool, Joints), String> {
    let food = w
        .food(food_id)
        .ok_or_else(|| format!("food {food_id:?} is not on the plate"))?;
    let arm = &w.config.arm;
    let seed = w.config.stations.above_plate;
    let mut best: Option<(SchemaMotion, bool, Joints, f64)> = None;
    for flip in [false, true] {
        let Ok(motion) = SchemaMotion::plan(food, action, flip) else {
            continue;
        };
        let Ok(q_pre) = solve_ik(arm, &motion.pre_approach, &seed, &IkOptions::default()) else {
            continue;
        };
        if solve_ik(arm, &motion.entry, &q_pre, &IkOptions::default()).is_err() {
            continue;
        }
        let cost = (q_pre - seed).norm();
        if best.as_ref().is_none_or(|b| cost < b.3) {
            best = Some((motion, flip, q_pre, cost));
        }
    }
    best.map(|(m, f, q, _)| (m, f, q))
        .ok_or_else(|| format!("no reachable approach for {food_id:?}"))
}

impl Behavior for ComputeFrames {
    fn tick(&mut self, ctx: &mut TickContext<'_, '_>) -> NodeStatus {
        let Some(lib) = ctx.inputs.library else {
            return ctx.fail(FailureReason::ActionFailed {
                detail: "no action library loaded".into(),
            });
        };
        let Some(action) = lib.get(self.args.action_index).copied() else {
            return ctx.fail(FailureReason::ActionFailed {
                detail: format!("action index {} out of range", self.args.action_index),
            });
        };
        let (_, flip, q_pre) = match plan_schema(ctx.inputs.world, &self.args.food_id, &action) {
            Ok(p) => p,
            Err(detail) => return ctx.fail(FailureReason::PlanningFailed { detail }),
        };
        let bb = &mut *ctx.blackboard;
        let writes = [
            ("food_id", BbValue::Text(self.args.food_id.clone())),
            ("action_index", BbValue::Index(self.args.action_index)),
            ("schema", BbValue::Schema(action)),
            ("flip", BbValue::Bool(flip)),
            ("approach_q", BbValue::Joints(q_pre)),
            ("haptic_series", BbValue::Series(Vec::new())),
        ];
        for (k, v) in writes {
            if let Err(e) = bb.set(k, v) {
                return ctx.fail(FailureReason::ActionFailed {
                    detail: e.to_string(),
                });
            }
        }
        NodeStatus::Success
    }

    fn reset(&mut self) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    /// Approach and pre-contact pause, gated.
    Approach,
    /// Compliant in-food manipulation.
    InFood,
    /// Extraction and post-exit pause, gated; draws the outcome at the end.
    Extraction,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SegmentArgs {
    pub segment: Segment,
}

/// Stiffer than the default impedance so the fork follows the in-food
/// motion against food resistance.
pub fn in_food_gains() -> ImpedanceGains {
    ImpedanceGains {
        stiffness: Joints::repeat(150.0),
        damping: Joints::repeat(0.5),
        torque_limit: Joints::new(30.0, 30.0, 20.0, 10.0, 10.0, 10.0),
    }
}

/// Force magnitude (N) that counts as having touched the food.
const FOOD_CONTACT_FORCE: f64 = 0.3;
const TRACK_GAIN: f64 = 5.0;
const MAX_TIP_SPEED: f64 = 0.25;
const MAX_TIP_RATE: f64 = 2.0;

pub struct SchemaSegment {
    segment: Segment,
    run: Option<SegmentRun>,
}

struct SegmentRun {
    motion: SchemaMotion,
    food_id: String,
    arm_index: usize,
    clock: f64,
    end: f64,
    target_q: Option<Joints>,
}

impl SchemaSegment {
    pub fn new(segment: Segment) -> Self {
        Self { segment, run: None }
    }

    fn window(&self, m: &SchemaMotion) -> (f64, f64) {
        let phases = |p: SchemaPhase| -> (f64, f64) {
            let mut t = 0.0;
            let mut start = None;
            let step = 1e-3;
            while t <= m.duration() + step {
                let inside = m.phase_at(t) == p;
                match (inside, start) {
                    (true, None) => start = Some(t),
                    (false, Some(s)) => return (s, t),
                    _ => {}
                }
                t += step;
            }
            (start.unwrap_or(m.duration()), m.duration())
        };
        match self.segment {
            Segment::Approach => (0.0, phases(SchemaPhase::InFood).0),
            Segment::InFood => phases(SchemaPhase::InFood),
            Segment::Extraction => (phases(SchemaPhase::InFood).1, m.duration()),
        }
    }
}

fn clamp_twist(mut t: Vector6<f64>) -> Vector6<f64> {
    let lin = t.fixed_rows::<3>(0).norm();
    if lin > MAX_TIP_SPEED {
        let s = MAX_TIP_SPEED / lin;
        t.fixed_rows_mut::<3>(0).scale_mut(s);
    }
    let ang = t.fixed_rows::<3>(3).norm();
    if ang > MAX_TIP_RATE {
        let s = MAX_TIP_RATE / ang;
        t.fixed_rows_mut::<3>(3).scale_mut(s);
    }
    t
}

/// Gated joint velocity tracking a Cartesian reference.
pub fn track_pose_velocity(arm: &ArmModel, q: &Joints, now: &Pose, next: &Pose, dt: f64) -> Joints {
    let ff = pose_error(now, next) / dt;
    let fb = pose_error(&arm.tip_pose(q), now) * TRACK_GAIN;
    let v = dls_step(&arm.jacobian(q), &clamp_twist(ff + fb), 0.02);
    let limits = arm.velocity_limits();
    let ratio = v.zip_map(&limits, |a, l| a.abs() / l).max();
    if ratio > 1.0 {
        v / ratio
    } else {
        v
    }
}

/// Move a joint target so its tip follows `pose`.
pub fn chase_pose(arm: &ArmModel, from: &Joints, pose: &Pose) -> Joints {
    let mut q = *from;
    for _ in 0..3 {
        let e = pose_error(&arm.tip_pose(&q), pose);
        q = arm.clamp_to_limits(&(q + dls_step(&arm.jacobian(&q), &e, 0.02)));
    }
    q
}

impl Behavior for SchemaSegment {
    fn tick(&mut self, ctx: &mut TickContext<'_, '_>) -> NodeStatus {
        if let Some(r) = safety_check(ctx) {
            return ctx.fail(r);
        }
        let w = ctx.inputs.world;
        let dt = ctx.inputs.dt;
        if self.run.is_none() {
            let bb = &*ctx.blackboard;
            let (Some(food_id), Some(action), Some(flip), Some(arm_index)) = (
                bb.text("food_id"),
                bb.schema_action("schema"),
                bb.flag("flip"),
                bb.index("action_index"),
            ) else {
                return ctx.fail(FailureReason::ActionFailed {
                    detail: "frames were not computed".into(),
                });
            };
            let motion = match w.food(&food_id).map(|f| SchemaMotion::plan(f, &action, flip)) {
                Some(Ok(m)) => m,
                Some(Err(e)) => {
                    return ctx.fail(FailureReason::PlanningFailed {
                        detail: e.to_string(),
                    })
                }
                None => {
                    return ctx.fail(FailureReason::ActionFailed {
                        detail: format!("food {food_id:?} left the plate"),
                    })
                }
            };
            let (start, end) = self.window(&motion);
            self.run = Some(SegmentRun {
                motion,
                food_id,
                arm_index,
                clock: start,
                end,
                target_q: None,
            });
        }
        if self.segment != Segment::Approach {
            if let Some(r) = ctx.inputs.ft {
                let mut series = ctx.blackboard.series("haptic_series").unwrap_or_default();
                series.push(*r);
                let _ = ctx.blackboard.set("haptic_series", BbValue::Series(series));
            }
        }
        let run = self.run.as_mut().expect("initialized above");
        let arm = &w.config.arm;
        let q = w.arm.angles;
        if run.clock >= run.end - 1e-9 {
            if self.segment == Segment::Extraction {
                let series = ctx.blackboard.series("haptic_series").unwrap_or_default();
                let touched = series.iter().any(|r| r.force_norm() > FOOD_CONTACT_FORCE);
                let p = w
                    .food(&run.food_id)
                    .map_or(0.0, |f| f.success_probability(run.arm_index));
                let draw: f64 = rng_for(w.rng_seed, w.tick, Stream::Acquisition).random();
                let success = touched && draw < p;
                if success {
                    ctx.effects.push(WorldEffect::AttachFood {
                        food_id: run.food_id.clone(),
                    });
                }
                let _ = ctx.blackboard.set("success", BbValue::Bool(success));
                ctx.events.push(TraceEvent::Acquisition {
                    t: ctx.inputs.now,
                    food_id: run.food_id.clone(),
                    arm: run.arm_index,
                    success,
                });
            }
            return NodeStatus::Success;
        }
        let now_pose = run.motion.pose_at(run.clock);
        let next_pose = run.motion.pose_at(run.clock + dt);
        run.clock += dt;
        if self.segment == Segment::InFood {
            let from = *run.target_q.get_or_insert(q);
            let target = chase_pose(arm, &from, &next_pose);
            run.target_q = Some(target);
            ctx.command(ControlIntent::Compliant {
                target_q: target,
                target_v: Joints::zeros(),
                gains: in_food_gains(),
            });
        } else {
            let v = track_pose_velocity(arm, &q, &now_pose, &next_pose, dt);
            let gate = ctx.gate;
            ctx.command(ControlIntent::Velocity { v, gate });
        }
        NodeStatus::Running
    }

    fn reset(&mut self) {
        self.run = None;
    }
}

/// Runs the transfer policy from staging to retraction.
#[derive(Default)]
pub struct Transfer {
    policy: Option<TransferPolicy>,
}

impl Behavior for Transfer {
    fn tick(&mut self, ctx: &mut TickContext<'_, '_>) -> NodeStatus {
        let inp = ctx.inputs;
        let w = inp.world;
        let policy = self.policy.get_or_insert_with(|| {
            let arm = w.config.arm.clone();
            let staging = arm.tip_pose(&w.config.stations.staging);
            TransferPolicy::new(inp.params.transfer(), arm, staging)
        });
        policy.config = inp.params.transfer();
        let phase_before = policy.phase();
        let cfg = ClassifierConfig {
            bite_threshold: inp.params.bite_threshold,
            ..ClassifierConfig::default()
        };
        let window_len = cfg.min_samples.min(inp.perception.ft_window.len());
        let ft = &inp.perception.ft_window[inp.perception.ft_window.len() - window_len..];
        let interaction = classify_interaction(
            &ClassifierInput {
                ft,
                spasm_fired: inp.perception.spasm_in_window,
                in_mouth: phase_before == TransferPhase::InMouth,
                tine_normal: -w.tip_pose().x_axis(),
            },
            &cfg,
        )
        .ok();
        let gate_abort = inp.gate_abort();
        let cmd = policy.step(&crate::transfer::PolicyInputs {
            now: inp.now,
            q: w.arm.angles,
            mouth: inp.perception.mouth.as_ref(),
            readiness: inp.perception.readiness,
            interaction,
            shutdown: inp.guard == GuardState::Shutdown,
            gate_aborted: gate_abort.is_some(),
        });
        let phase = policy.phase();
        let bite = policy.bite_detected();
        ctx.events.push(TraceEvent::Transfer {
            t: inp.now,
            phase,
            interaction,
            motion: cmd.is_motion(),
        });
        let _ = ctx.blackboard.set("bite_detected", BbValue::Bool(bite));
        match phase {
            TransferPhase::Done => NodeStatus::Success,
            TransferPhase::Aborted => {
                let reason = gate_abort.unwrap_or(FailureReason::SafetyShutdown);
                ctx.fail(reason)
            }
            _ => {
                let gate = ctx.gate;
                ctx.command(cmd.intent(gate, ImpedanceGains::default()));
                NodeStatus::Running
            }
        }
    }

    fn reset(&mut self) {
        self.policy = None;
    }
}

/// Straight-line gated retreat of the tip to the staging pose.
pub struct RetractToStaging;

const RETRACT_TOLERANCE: f64 = 0.005;

impl Behavior for RetractToStaging {
    fn tick(&mut self, ctx: &mut TickContext<'_, '_>) -> NodeStatus {
        if let Some(r) = safety_check(ctx) {
            return ctx.fail(r);
        }
        let w = ctx.inputs.world;
        let arm = &w.config.arm;
        let target = arm.tip_pose(&w.config.stations.staging);
        let q = w.arm.angles;
        if (arm.tip_pose(&q).position - target.position).norm() <= RETRACT_TOLERANCE {
            return NodeStatus::Success;
        }
        let v = servo_velocity(arm, &q, &target, APPROACH_SPEED * ctx.inputs.params.speed_scale);
        let gate = ctx.gate;
        ctx.command(ControlIntent::Velocity { v, gate });
        NodeStatus::Running
    }

    fn reset(&mut self) {}
}

pub struct FoodOnFork;

impl Predicate for FoodOnFork {
    fn check(&self, inputs: &TickInputs<'_>, _: &Blackboard) -> bool {
        inputs.world.food_on_fork.is_some()
    }
}

pub struct GuardRun;

impl Predicate for GuardRun {
    fn check(&self, inputs: &TickInputs<'_>, _: &Blackboard) -> bool {
        inputs.guard == GuardState::Run
    }
}
