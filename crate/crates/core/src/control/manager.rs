//! Exclusive controller manager: exactly one controller's command reaches the
//! arm per tick.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::compliant::{tick_compliant, ImpedanceGains};
use super::gate::{ForceGate, GateConfig, GateOutcome};
use crate::sensors::ForceTorqueReading;
use crate::world::{ArmCommand, Joints};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Idle,
    Trajectory,
    GatedVelocity,
    Compliant,
}

impl ControllerKind {
    /// Command a controller emits when it is deactivated.
    pub fn zero_command(self) -> ArmCommand {
        match self {
            ControllerKind::Compliant => ArmCommand::Torque(Joints::zeros()),
            _ => ArmCommand::Velocity(Joints::zeros()),
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ManagerError {
    #[error("controller switch refused while the safety guard is in shutdown")]
    SwitchWhileEstopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerManagerState {
    pub active: ControllerKind,
    pub switch_count: u64,
    /// Set by the safety path; refuses all switches.
    pub locked: bool,
}

impl Default for ControllerManagerState {
    fn default() -> Self {
        Self {
            active: ControllerKind::Idle,
            switch_count: 0,
            locked: false,
        }
    }
}

/// Deactivate the current controller (returning its final zero command) and
/// activate `target`. Switching to the active controller is a no-op.
pub fn switch_controller(
    mgr: &ControllerManagerState,
    target: ControllerKind,
) -> Result<(ControllerManagerState, Option<ArmCommand>), ManagerError> {
    if mgr.locked {
        return Err(ManagerError::SwitchWhileEstopped);
    }
    if mgr.active == target {
        return Ok((*mgr, None));
    }
    let final_cmd = mgr.active.zero_command();
    Ok((
        ControllerManagerState {
            active: target,
            switch_count: mgr.switch_count + 1,
            locked: false,
        },
        Some(final_cmd),
    ))
}

/// What a behavior wants the arm to do this tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlIntent {
    /// Stay put with whatever controller is active.
    Hold,
    /// Track a timed reference under the force gate.
    Trajectory {
        q_ref: Joints,
        v_ref: Joints,
        gate: GateConfig,
    },
    /// Direct joint velocity under the force gate.
    Velocity { v: Joints, gate: GateConfig },
    Compliant {
        target_q: Joints,
        target_v: Joints,
        gains: ImpedanceGains,
    },
}

impl ControlIntent {
    pub fn controller(&self) -> Option<ControllerKind> {
        match self {
            ControlIntent::Hold => None,
            ControlIntent::Trajectory { .. } => Some(ControllerKind::Trajectory),
            ControlIntent::Velocity { .. } => Some(ControllerKind::GatedVelocity),
            ControlIntent::Compliant { .. } => Some(ControllerKind::Compliant),
        }
    }

    pub fn is_motion(&self) -> bool {
        !matches!(self, ControlIntent::Hold)
    }
}

/// Trajectory follower position gain, 1/s.
pub const TRACKING_GAIN: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Routed {
    pub command: ArmCommand,
    /// Controller that produced `command`.
    pub source: ControllerKind,
    pub gate: Option<GateOutcome>,
    pub switched: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ControllerManager {
    pub state: ControllerManagerState,
    pub gate: ForceGate,
    hold_q: Option<Joints>,
}

impl ControllerManager {
    pub fn active(&self) -> ControllerKind {
        self.state.active
    }

    pub fn locked(&self) -> bool {
        self.state.locked
    }

    /// Kill every controller: go idle, lock, and return the zero command.
    pub fn kill(&mut self) -> ArmCommand {
        let cmd = self.state.active.zero_command();
        self.state.active = ControllerKind::Idle;
        self.state.locked = true;
        self.hold_q = None;
        match cmd {
            ArmCommand::Torque(_) => ArmCommand::zero_velocity(),
            c => c,
        }
    }

    pub fn unlock(&mut self) {
        self.state.locked = false;
    }

    /// Turn an intent into the single command for this tick.
    pub fn route(
        &mut self,
        intent: &ControlIntent,
        q: &Joints,
        v: &Joints,
        ft: Option<&ForceTorqueReading>,
        now: f64,
        velocity_limits: &Joints,
    ) -> Routed {
        if self.state.locked {
            return Routed {
                command: ArmCommand::zero_velocity(),
                source: ControllerKind::Idle,
                gate: None,
                switched: false,
            };
        }
        if let Some(target) = intent.controller() {
            if target != self.state.active {
                let source = self.state.active;
                let (next, final_cmd) =
                    switch_controller(&self.state, target).expect("manager is unlocked");
                self.state = next;
                self.hold_q = None;
                return Routed {
                    command: final_cmd.unwrap_or_else(|| source.zero_command()),
                    source,
                    gate: None,
                    switched: true,
                };
            }
            self.hold_q = None;
        }
        let source = self.state.active;
        let (command, gate) = match intent {
            ControlIntent::Hold => (self.hold(q, v), None),
            ControlIntent::Trajectory { q_ref, v_ref, gate } => {
                let raw = v_ref + (q_ref - q) * TRACKING_GAIN;
                let clamped = raw.zip_map(velocity_limits, |c, l| c.clamp(-l, l));
                let out = self.gate.tick(&clamped, ft, now, gate);
                (ArmCommand::Velocity(out.command()), Some(out))
            }
            ControlIntent::Velocity { v: cmd, gate } => {
                let out = self.gate.tick(cmd, ft, now, gate);
                (ArmCommand::Velocity(out.command()), Some(out))
            }
            ControlIntent::Compliant {
                target_q,
                target_v,
                gains,
            } => (
                ArmCommand::Torque(tick_compliant(q, v, target_q, target_v, gains)),
                None,
            ),
        };
        Routed {
            command,
            source,
            gate,
            switched: false,
        }
    }

    fn hold(&mut self, q: &Joints, v: &Joints) -> ArmCommand {
        match self.state.active {
            ControllerKind::Compliant => {
                let anchor = *self.hold_q.get_or_insert(*q);
                ArmCommand::Torque(tick_compliant(
                    q,
                    v,
                    &anchor,
                    &Joints::zeros(),
                    &ImpedanceGains::default(),
                ))
            }
            _ => ArmCommand::zero_velocity(),
        }
    }
}
