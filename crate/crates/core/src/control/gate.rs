//! Force-gated velocity control.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensors::ForceTorqueReading;
use crate::world::{Joints, CONTROL_DT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    /// N, Euclidean norm of force.
    pub f_max: f64,
    /// N·m, Euclidean norm of torque.
    pub tau_max: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            f_max: 4.0,
            tau_max: 4.0,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        if ok(self.f_max) && ok(self.tau_max) {
            Ok(())
        } else {
            Err("gate thresholds must be positive and finite".into())
        }
    }

    pub fn trips(&self, ft: &ForceTorqueReading) -> bool {
        ft.force_norm() > self.f_max || ft.torque_norm() > self.tau_max
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AbortReason {
    #[error("force gate tripped: |f| = {force:.3} N, |tau| = {torque:.3} N·m")]
    ForceGateTripped { force: f64, torque: f64 },
    #[error("force/torque reading stale (age {age:?} s)")]
    StaleReading { age: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateOutcome {
    Pass(Joints),
    /// The command to send is all zeros.
    Abort(AbortReason),
}

impl GateOutcome {
    pub fn command(&self) -> Joints {
        match self {
            GateOutcome::Pass(v) => *v,
            GateOutcome::Abort(_) => Joints::zeros(),
        }
    }
}

/// Readings older than this many control periods are stale.
pub const STALE_PERIODS: f64 = 2.0;

/// Stateless gate check for one tick. A missing reading is stale.
pub fn tick_gated_velocity(
    cmd: &Joints,
    ft: Option<&ForceTorqueReading>,
    now: f64,
    gate: &GateConfig,
    period: f64,
) -> GateOutcome {
    let Some(ft) = ft else {
        return GateOutcome::Abort(AbortReason::StaleReading { age: None });
    };
    let age = now - ft.timestamp;
    if age > STALE_PERIODS * period + 1e-9 {
        return GateOutcome::Abort(AbortReason::StaleReading { age: Some(age) });
    }
    if gate.trips(ft) {
        return GateOutcome::Abort(AbortReason::ForceGateTripped {
            force: ft.force_norm(),
            torque: ft.torque_norm(),
        });
    }
    GateOutcome::Pass(*cmd)
}

/// Gate with an abort latch: once tripped it outputs zeros until re-armed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForceGate {
    pub latched: Option<AbortReason>,
}

impl ForceGate {
    pub fn tick(
        &mut self,
        cmd: &Joints,
        ft: Option<&ForceTorqueReading>,
        now: f64,
        gate: &GateConfig,
    ) -> GateOutcome {
        if let Some(reason) = self.latched {
            return GateOutcome::Abort(reason);
        }
        let out = tick_gated_velocity(cmd, ft, now, gate, CONTROL_DT);
        if let GateOutcome::Abort(reason) = out {
            self.latched = Some(reason);
        }
        out
    }

    pub fn rearm(&mut self) {
        self.latched = None;
    }
}
