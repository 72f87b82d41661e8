//! The closed control loop at a fixed tick.
//!
//! Each tick runs, in order: sense (F/T, cameras, perception), watchdog and
//! receiver guard, then either a safety stop or one behavior-tree tick
//! routed through the controller manager, then one world step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquire::ActionLibrary;
use crate::bt::{
    FailureReason, NodeStatus, PerceptionSnapshot, Registry, TickInputs, TraceEvent,
    TreeDefinition, TreeExecution, WorldEffect,
};
use crate::control::{AbortReason, ControlIntent, ControllerKind, ControllerManager, GateOutcome};
use crate::params::{ParamError, ParamPatch, ParamSet};
use crate::safety::{
    engage_estop, reset_estop, AllClearMessage, EStopSource, EStopState, GuardState, InvariantId,
    ReceiverGuard, SafetyError, ViolationRecord, Watchdog, WatchdogConfig,
};
use crate::sensors::{observe_both, read_force_torque, ForceTorqueReading, SensorHealth};
use crate::transfer::{check_readiness, Perception, PerceptionConfig};
use crate::world::{step_world, ArmCommand, WorldError, WorldState, CONTROL_DT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    pub dt: f64,
    pub watchdog: WatchdogConfig,
    pub perception: PerceptionConfig,
    /// A telemetry frame every this many ticks.
    pub telemetry_divisor: u64,
    /// F/T readings handed to the interaction classifier.
    pub ft_window: usize,
    /// A spasm seen this recently counts for classification, seconds.
    pub spasm_window: f64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            dt: CONTROL_DT,
            watchdog: WatchdogConfig::default(),
            perception: PerceptionConfig::default(),
            telemetry_divisor: 10,
            ft_window: 20,
            spasm_window: 0.2,
        }
    }
}

/// Scripted fault. Windows are `[start, end)`; a missing end never clears.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    FtDisconnect { start: f64, end: Option<f64> },
    CameraOcclusion { camera: u8, start: f64, end: Option<f64> },
    /// All-clear messages are lost before reaching the receiver.
    HeartbeatLoss { start: f64, end: Option<f64> },
    /// Re-deliver an already-seen all-clear.
    ReplayAllClear { at: f64 },
    Estop { at: f64 },
}

fn in_window(start: f64, end: Option<f64>, t: f64) -> bool {
    t >= start - 1e-9 && end.is_none_or(|e| t < e - 1e-9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ActionState {
    Accepted,
    Running,
    Succeeded,
    Failed { reason: FailureReason },
    Preempted,
}

impl ActionState {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, ActionState::Accepted | ActionState::Running)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub id: u64,
    pub tree: String,
    #[serde(flatten)]
    pub state: ActionState,
    /// Node ids from the root to the leaf ticked last.
    pub path: Vec<String>,
    pub accepted_at: f64,
    pub started_at: Option<f64>,
    pub ended_at: Option<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StartError {
    #[error("an action is already in flight (id {0})")]
    Busy(u64),
    #[error("safety lockout: {0}")]
    SafetyLockout(&'static str),
    #[error(transparent)]
    Validation(#[from] crate::bt::BtError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreemptError {
    #[error("unknown action id {0}")]
    UnknownId(u64),
    #[error("action {0} is already terminal")]
    AlreadyTerminal(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SafetyEvent {
    Violation { t: f64, violations: Vec<InvariantId> },
    GuardShutdown { t: f64 },
    GuardRun { t: f64 },
    GateAbort { t: f64, reason: AbortReason },
    EstopEngaged { t: f64, source: EStopSource },
    EstopReset { t: f64 },
    UtensilBroken { t: f64 },
    ReplayDetected { t: f64, seq: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtRecord {
    pub seq: u64,
    pub t: f64,
    pub f: [f64; 3],
    pub tau: [f64; 3],
}

impl From<&ForceTorqueReading> for FtRecord {
    fn from(r: &ForceTorqueReading) -> Self {
        Self {
            seq: r.seq,
            t: r.timestamp,
            f: r.force.into(),
            tau: r.torque.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatchdogStatus {
    pub guard: GuardState,
    /// Seconds since the receiver accepted an all-clear.
    pub last_allclear_age: Option<f64>,
    pub violations: Vec<InvariantId>,
    pub estop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBrief {
    pub id: u64,
    pub tree: String,
    pub path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MouthBrief {
    pub position: [f64; 3],
    pub confidence: f64,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub seq: u64,
    pub t: f64,
    pub q: [f64; 6],
    pub dq: [f64; 6],
    pub ft: Option<FtRecord>,
    pub watchdog: WatchdogStatus,
    pub controller: ControllerKind,
    pub action: Option<ActionBrief>,
    pub mouth: Option<MouthBrief>,
    pub utensil_intact: bool,
    pub food_on_fork: Option<String>,
    pub params_revision: u64,
}

/// What one tick did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub tick: u64,
    /// Time at the start of the tick.
    pub t: f64,
    pub command: ArmCommand,
    pub guard: GuardState,
    /// The tick was a safety stop.
    pub stopped: bool,
    pub telemetry: Option<TelemetryFrame>,
    /// Action that reached a terminal state this tick.
    pub finished: Option<ActionRecord>,
}

fn arr6(v: &crate::world::Joints) -> [f64; 6] {
    std::array::from_fn(|i| v[i])
}

pub struct Robot {
    pub world: WorldState,
    pub config: RuntimeConfig,
    params: ParamSet,
    pub library: Option<ActionLibrary>,
    registry: Registry,
    manager: ControllerManager,
    watchdog: Watchdog,
    guard: ReceiverGuard,
    guard_state: GuardState,
    estop: EStopState,
    health: SensorHealth,
    perception: Perception,
    snapshot: PerceptionSnapshot,
    last_ft: Option<ForceTorqueReading>,
    last_spasm: Option<f64>,
    last_message: Option<AllClearMessage>,
    execution: Option<TreeExecution>,
    last_blackboard: Option<crate::bt::Blackboard>,
    actions: BTreeMap<u64, ActionRecord>,
    next_id: u64,
    last_gate: Option<GateOutcome>,
    faults: Vec<Fault>,
    telemetry_seq: u64,
    pub trace: Vec<(u64, TraceEvent)>,
    pub safety_events: Vec<SafetyEvent>,
    logged_violations: usize,
}

impl Robot {
    pub fn new(
        world: WorldState,
        params: ParamSet,
        library: Option<ActionLibrary>,
        config: RuntimeConfig,
    ) -> Result<Self, SafetyError> {
        params
            .validate()
            .map_err(|e| SafetyError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            world,
            params,
            library,
            registry: Registry::feeding(),
            manager: ControllerManager::default(),
            watchdog: Watchdog::new(config.watchdog)?,
            guard: ReceiverGuard::default(),
            guard_state: GuardState::Shutdown,
            estop: EStopState::default(),
            health: SensorHealth::default(),
            perception: Perception::new(config.perception),
            snapshot: PerceptionSnapshot::default(),
            last_ft: None,
            last_spasm: None,
            last_message: None,
            execution: None,
            last_blackboard: None,
            actions: BTreeMap::new(),
            next_id: 1,
            last_gate: None,
            faults: Vec::new(),
            telemetry_seq: 0,
            trace: Vec::new(),
            safety_events: Vec::new(),
            logged_violations: 0,
            config,
        })
    }

    pub fn with_faults(mut self, faults: Vec<Fault>) -> Self {
        self.faults = faults;
        self
    }

    pub fn add_fault(&mut self, f: Fault) {
        self.faults.push(f);
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Swap in a patched parameter set; ticks see either the old or the new set.
    pub fn set_params(&mut self, patch: &ParamPatch) -> Result<ParamSet, ParamError> {
        let next = self.params.patched(patch)?;
        self.params = next.clone();
        Ok(next)
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn guard_state(&self) -> GuardState {
        self.guard_state
    }

    pub fn estop(&self) -> &EStopState {
        &self.estop
    }

    pub fn violation_log(&self) -> &[ViolationRecord] {
        &self.watchdog.log
    }

    pub fn perception(&self) -> &Perception {
        &self.perception
    }

    pub fn snapshot(&self) -> &PerceptionSnapshot {
        &self.snapshot
    }

    pub fn action(&self, id: u64) -> Option<&ActionRecord> {
        self.actions.get(&id)
    }

    pub fn actions(&self) -> impl Iterator<Item = &ActionRecord> {
        self.actions.values()
    }

    /// The non-terminal action, if any.
    pub fn current_action(&self) -> Option<&ActionRecord> {
        self.execution.as_ref().and_then(|e| self.actions.get(&e.id))
    }

    /// Blackboard of the current or most recently finished execution.
    pub fn blackboard(&self) -> Option<&crate::bt::Blackboard> {
        self.execution
            .as_ref()
            .map(|e| &e.blackboard)
            .or(self.last_blackboard.as_ref())
    }

    pub fn is_idle(&self) -> bool {
        self.execution.is_none() && self.world.arm.velocities.iter().all(|v| *v == 0.0)
    }

    pub fn start_action(&mut self, def: &TreeDefinition) -> Result<u64, StartError> {
        if let Some(e) = &self.execution {
            return Err(StartError::Busy(e.id));
        }
        if self.estop.engaged {
            return Err(StartError::SafetyLockout("e-stop latched"));
        }
        if self.guard_state == GuardState::Shutdown {
            return Err(StartError::SafetyLockout("watchdog shutdown"));
        }
        let id = self.next_id;
        let exec = self.registry.instantiate(def, id)?;
        self.next_id += 1;
        self.actions.insert(
            id,
            ActionRecord {
                id,
                tree: def.name.clone(),
                state: ActionState::Accepted,
                path: Vec::new(),
                accepted_at: self.world.time,
                started_at: None,
                ended_at: None,
            },
        );
        self.execution = Some(exec);
        Ok(id)
    }

    /// Request preemption; the action is Preempted after the next tick, or
    /// at once if it has not started.
    pub fn preempt(&mut self, id: u64) -> Result<ActionRecord, PreemptError> {
        let rec = self.actions.get(&id).ok_or(PreemptError::UnknownId(id))?;
        if rec.state.is_terminal() {
            return Err(PreemptError::AlreadyTerminal(id));
        }
        let accepted = rec.state == ActionState::Accepted;
        let now = self.world.time;
        if accepted {
            self.execution = None;
            let rec = self.actions.get_mut(&id).expect("checked above");
            rec.state = ActionState::Preempted;
            rec.ended_at = Some(now);
            return Ok(rec.clone());
        }
        let exec = self
            .execution
            .as_mut()
            .filter(|e| e.id == id)
            .expect("the non-terminal action owns the execution");
        exec.preempt().map_err(|_| PreemptError::AlreadyTerminal(id))?;
        Ok(self.actions[&id].clone())
    }

    /// Latch the e-stop. Controllers die on the next tick at the latest;
    /// [`Robot::step`] also kills them immediately when called.
    pub fn engage_estop(&mut self, source: EStopSource) {
        if !self.estop.engaged {
            self.safety_events.push(SafetyEvent::EstopEngaged {
                t: self.world.time,
                source,
            });
        }
        self.estop = engage_estop(&self.estop, source, self.world.time);
    }

    pub fn reset_estop(&mut self) -> Result<(), SafetyError> {
        let was = self.estop.engaged;
        self.estop = reset_estop(&self.estop, self.is_idle())?;
        if was {
            self.safety_events
                .push(SafetyEvent::EstopReset { t: self.world.time });
        }
        Ok(())
    }

    /// Clear a replay latch on the receiver guard.
    pub fn reset_guard(&mut self) {
        self.guard.reset();
    }

    fn apply_faults(&mut self, now: f64) {
        let mut ft = false;
        let mut occ = [false; 2];
        let mut estop = false;
        for f in &self.faults {
            match *f {
                Fault::FtDisconnect { start, end } => ft |= in_window(start, end, now),
                Fault::CameraOcclusion { camera, start, end } => {
                    if let Some(o) = occ.get_mut(camera as usize) {
                        *o |= in_window(start, end, now);
                    }
                }
                Fault::Estop { at } => estop |= in_window(at, Some(at + self.config.dt), now),
                Fault::HeartbeatLoss { .. } | Fault::ReplayAllClear { .. } => {}
            }
        }
        self.world.faults.ft_disconnected = ft;
        self.world.faults.forced_occlusion = occ;
        if estop {
            self.engage_estop(EStopSource::Software);
        }
    }

    fn heartbeat_lost(&self, now: f64) -> bool {
        self.faults.iter().any(|f| match *f {
            Fault::HeartbeatLoss { start, end } => in_window(start, end, now),
            _ => false,
        })
    }

    fn replay_due(&self, now: f64) -> bool {
        self.faults.iter().any(|f| match *f {
            Fault::ReplayAllClear { at } => in_window(at, Some(at + self.config.dt), now),
            _ => false,
        })
    }

    fn sense(&mut self, now: f64) {
        self.health.connected = !self.world.faults.ft_disconnected;
        self.last_ft = read_force_torque(&self.world, &self.health).ok();
        let window = &mut self.snapshot.ft_window;
        if let Some(r) = &self.last_ft {
            self.health.record(r);
            window.push(*r);
            if window.len() > self.config.ft_window {
                window.remove(0);
            }
        }
        let obs = observe_both(&self.world);
        self.perception.config.spasm_threshold = self.params.spasm_threshold;
        let frame = self.perception.update(&obs, now);
        if frame.spasm {
            self.last_spasm = Some(now);
        }
        self.snapshot.readiness = check_readiness(
            &self.world,
            frame.fused.as_ref(),
            self.perception.last_fused_time(),
        );
        self.snapshot.mouth = frame.smoothed;
        self.snapshot.spasm_in_window = self
            .last_spasm
            .is_some_and(|t| now - t <= self.config.spasm_window + 1e-9);
    }

    fn run_watchdog(&mut self, now: f64) {
        let msg = self.watchdog.tick(&self.health, &self.estop, now);
        for rec in &self.watchdog.log[self.logged_violations..] {
            self.safety_events.push(SafetyEvent::Violation {
                t: rec.t,
                violations: rec.violations.clone(),
            });
        }
        self.logged_violations = self.watchdog.log.len();
        if self.replay_due(now) {
            if let Some(old) = self.last_message.clone() {
                if self.guard.receive(&old).is_err() {
                    self.safety_events
                        .push(SafetyEvent::ReplayDetected { t: now, seq: old.seq });
                }
            }
        }
        if let Some(m) = msg {
            if !self.heartbeat_lost(now) && self.guard.receive(&m).is_ok() {
                self.last_message = Some(m);
            }
        }
        let state = self.guard.poll(now, &self.watchdog.config);
        if state != self.guard_state {
            self.safety_events.push(match state {
                GuardState::Shutdown => SafetyEvent::GuardShutdown { t: now },
                GuardState::Run => SafetyEvent::GuardRun { t: now },
            });
        }
        self.guard_state = state;
    }

    fn finish(&mut self, now: f64) -> Option<ActionRecord> {
        let exec = self.execution.as_ref()?;
        if !exec.is_terminal() {
            return None;
        }
        let exec = self.execution.take().expect("checked above");
        let rec = self.actions.get_mut(&exec.id).expect("executions have records");
        rec.path = exec.current_path.clone();
        rec.ended_at = Some(now);
        rec.state = match (exec.status, exec.failure) {
            (NodeStatus::Success, _) => ActionState::Succeeded,
            (_, Some(FailureReason::Preempted)) => ActionState::Preempted,
            (_, reason) => ActionState::Failed {
                reason: reason.unwrap_or(FailureReason::SafetyShutdown),
            },
        };
        self.last_blackboard = Some(exec.blackboard);
        Some(rec.clone())
    }

    /// Advance one control period.
    pub fn step(&mut self) -> Result<StepReport, WorldError> {
        let now = self.world.time;
        let tick = self.world.tick;
        let dt = self.config.dt;
        self.apply_faults(now);
        self.sense(now);
        self.run_watchdog(now);

        if let Some(exec) = &self.execution {
            let rec = self.actions.get_mut(&exec.id).expect("executions have records");
            if rec.state == ActionState::Accepted {
                rec.state = ActionState::Running;
                rec.started_at = Some(now);
                self.manager.unlock();
                self.manager.gate.rearm();
                self.last_gate = None;
            }
        }

        let stopped = self.estop.engaged || self.guard_state == GuardState::Shutdown;
        let command = if stopped {
            if let Some(exec) = self.execution.as_mut() {
                exec.abort(FailureReason::SafetyShutdown);
            }
            self.last_gate = None;
            self.manager.kill()
        } else {
            let mut intent = ControlIntent::Hold;
            if let Some(exec) = self.execution.as_mut() {
                let inputs = TickInputs {
                    world: &self.world,
                    ft: self.last_ft.as_ref(),
                    guard: self.guard_state,
                    last_gate: self.last_gate.as_ref(),
                    perception: &self.snapshot,
                    params: &self.params,
                    library: self.library.as_ref(),
                    now,
                    dt,
                };
                let out = exec
                    .tick(&inputs)
                    .expect("only non-terminal executions are ticked");
                if let Some(i) = out.intent {
                    intent = i;
                }
                if let Some(rec) = self.actions.get_mut(&exec.id) {
                    rec.path = exec.current_path.clone();
                }
                for e in out.events {
                    self.trace.push((exec.id, e));
                }
                for eff in out.effects {
                    match eff {
                        WorldEffect::AttachFood { food_id } => {
                            if !self.world.attach_food(&food_id) {
                                log::warn!("could not attach {food_id}");
                            }
                        }
                    }
                }
            }
            let routed = self.manager.route(
                &intent,
                &self.world.arm.angles,
                &self.world.arm.velocities,
                self.last_ft.as_ref(),
                now,
                &self.world.config.arm.velocity_limits(),
            );
            if let Some(GateOutcome::Abort(r)) = &routed.gate {
                if !matches!(self.last_gate, Some(GateOutcome::Abort(_))) {
                    self.safety_events
                        .push(SafetyEvent::GateAbort { t: now, reason: *r });
                }
            }
            if routed.gate.is_some() {
                self.last_gate = routed.gate;
            }
            routed.command
        };
        let finished = self.finish(now);

        let was_intact = self.world.utensil.intact;
        self.world = step_world(&self.world, &command, dt)?;
        if was_intact && !self.world.utensil.intact {
            self.safety_events
                .push(SafetyEvent::UtensilBroken { t: self.world.time });
        }

        let telemetry = (tick % self.config.telemetry_divisor == 0).then(|| self.telemetry(now));
        Ok(StepReport {
            tick,
            t: now,
            command,
            guard: self.guard_state,
            stopped,
            telemetry,
            finished,
        })
    }

    /// Current telemetry, stamped `t`.
    pub fn telemetry(&mut self, t: f64) -> TelemetryFrame {
        self.telemetry_seq += 1;
        let w = &self.world;
        TelemetryFrame {
            seq: self.telemetry_seq,
            t,
            q: arr6(&w.arm.angles),
            dq: arr6(&w.arm.velocities),
            ft: self.last_ft.as_ref().map(FtRecord::from),
            watchdog: WatchdogStatus {
                guard: self.guard_state,
                last_allclear_age: self.guard.last_allclear.map(|a| t - a),
                violations: self.watchdog.current_violations().to_vec(),
                estop: self.estop.engaged,
            },
            controller: self.manager.active(),
            action: self.execution.as_ref().map(|e| ActionBrief {
                id: e.id,
                tree: e.tree.clone(),
                path: e.current_path.clone(),
            }),
            mouth: self.snapshot.mouth.as_ref().map(|m| MouthBrief {
                position: m.pose.position.into(),
                confidence: m.confidence,
                timestamp: m.timestamp,
            }),
            utensil_intact: w.utensil.intact,
            food_on_fork: w.food_on_fork.as_ref().map(|f| f.id.clone()),
            params_revision: self.params.revision,
        }
    }

    /// Step until the current action ends or `timeout` simulated seconds pass.
    pub fn run_action(&mut self, id: u64, timeout: f64) -> Result<ActionRecord, WorldError> {
        let t_end = self.world.time + timeout;
        while self.world.time < t_end {
            let rep = self.step()?;
            if let Some(rec) = rep.finished.filter(|r| r.id == id) {
                return Ok(rec);
            }
            if self.action(id).is_none_or(|r| r.state.is_terminal()) {
                break;
            }
        }
        Ok(self.actions.get(&id).cloned().expect("started actions have records"))
    }
}
