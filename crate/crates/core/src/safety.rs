//! Watchdog: invariant checks, the periodic all-clear heartbeat, receiver-side
//! deadman guards and the latched emergency stop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensors::SensorHealth;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SafetyError {
    #[error("invalid watchdog config: {0}")]
    InvalidConfig(String),
    #[error("e-stop reset refused: robot is not idle")]
    ResetWhileMoving,
    #[error("all-clear seq regressed from {last} to {got}")]
    SeqRegression { last: u64, got: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WatchdogConfig {
    pub heartbeat_period: f64,
    /// Maximum accepted force/torque reading age, seconds.
    pub staleness_limit: f64,
    pub receiver_timeout: f64,
}

impl Default for WatchdogConfig {
    fn default() -> Self {
        Self {
            heartbeat_period: 0.1,
            staleness_limit: 0.5,
            receiver_timeout: 0.3,
        }
    }
}

impl WatchdogConfig {
    pub fn validate(&self) -> Result<(), SafetyError> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !(pos(self.heartbeat_period) && pos(self.staleness_limit) && pos(self.receiver_timeout))
        {
            return Err(SafetyError::InvalidConfig(
                "all periods must be positive".into(),
            ));
        }
        if self.receiver_timeout < 2.0 * self.heartbeat_period {
            return Err(SafetyError::InvalidConfig(
                "receiver_timeout must be at least twice heartbeat_period".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InvariantId {
    ForceSensorStale,
    EstopEngaged,
}

impl InvariantId {
    pub const ALL: [InvariantId; 2] = [InvariantId::ForceSensorStale, InvariantId::EstopEngaged];

    pub fn as_str(self) -> &'static str {
        match self {
            InvariantId::ForceSensorStale => "FORCE_SENSOR_STALE",
            InvariantId::EstopEngaged => "ESTOP_ENGAGED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvariantCheck {
    Pass,
    Violations(Vec<InvariantId>),
}

impl InvariantCheck {
    pub fn passed(&self) -> bool {
        matches!(self, InvariantCheck::Pass)
    }

    pub fn violations(&self) -> &[InvariantId] {
        match self {
            InvariantCheck::Pass => &[],
            InvariantCheck::Violations(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EStopSource {
    Button,
    OperatorSwitch,
    Software,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EStopState {
    pub engaged: bool,
    pub source: Option<EStopSource>,
    pub engage_time: Option<f64>,
}

/// Engage and latch. A second engage leaves the first source and time intact.
pub fn engage_estop(estop: &EStopState, source: EStopSource, t: f64) -> EStopState {
    if estop.engaged {
        return *estop;
    }
    EStopState {
        engaged: true,
        source: Some(source),
        engage_time: Some(t),
    }
}

/// Clear the latch. Only allowed while the robot is idle.
pub fn reset_estop(estop: &EStopState, robot_idle: bool) -> Result<EStopState, SafetyError> {
    if !estop.engaged {
        return Ok(*estop);
    }
    if !robot_idle {
        return Err(SafetyError::ResetWhileMoving);
    }
    Ok(EStopState::default())
}

pub fn check_invariants(
    health: &SensorHealth,
    estop: &EStopState,
    now: f64,
    cfg: &WatchdogConfig,
) -> InvariantCheck {
    let mut v = Vec::new();
    if !health.connected || now - health.last_reading_time > cfg.staleness_limit {
        v.push(InvariantId::ForceSensorStale);
    }
    if estop.engaged {
        v.push(InvariantId::EstopEngaged);
    }
    if v.is_empty() {
        InvariantCheck::Pass
    } else {
        InvariantCheck::Violations(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllClearMessage {
    pub seq: u64,
    pub timestamp: f64,
    pub checked_invariants: Vec<InvariantId>,
}

/// One JSON-lines record of the violation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub t: f64,
    pub violations: Vec<InvariantId>,
}

impl ViolationRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("violation records serialize")
    }
}

/// Central checker. Emits an all-clear at most once per heartbeat period and
/// never on a tick with violations.
#[derive(Debug, Clone)]
pub struct Watchdog {
    pub config: WatchdogConfig,
    next_seq: u64,
    last_emit: Option<f64>,
    last_violations: Vec<InvariantId>,
    /// Violation onsets and changes, oldest first.
    pub log: Vec<ViolationRecord>,
}

impl Watchdog {
    pub fn new(config: WatchdogConfig) -> Result<Self, SafetyError> {
        config.validate()?;
        Ok(Self {
            config,
            next_seq: 1,
            last_emit: None,
            last_violations: Vec::new(),
            log: Vec::new(),
        })
    }

    pub fn last_emit(&self) -> Option<f64> {
        self.last_emit
    }

    pub fn current_violations(&self) -> &[InvariantId] {
        &self.last_violations
    }

    pub fn tick(
        &mut self,
        health: &SensorHealth,
        estop: &EStopState,
        now: f64,
    ) -> Option<AllClearMessage> {
        let check = check_invariants(health, estop, now, &self.config);
        let violations = check.violations().to_vec();
        if !violations.is_empty() && violations != self.last_violations {
            log::warn!("watchdog violations at t={now:.3}: {violations:?}");
            self.log.push(ViolationRecord {
                t: now,
                violations: violations.clone(),
            });
        }
        self.last_violations = violations;
        if !check.passed() {
            return None;
        }
        let due = match self.last_emit {
            None => true,
            Some(t) => now - t >= self.config.heartbeat_period - 1e-9,
        };
        if !due {
            return None;
        }
        let msg = AllClearMessage {
            seq: self.next_seq,
            timestamp: now,
            checked_invariants: InvariantId::ALL.to_vec(),
        };
        self.next_seq += 1;
        self.last_emit = Some(now);
        Some(msg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardState {
    Run,
    Shutdown,
}

/// `None` means no all-clear was ever received.
pub fn receiver_guard(last_allclear: Option<f64>, now: f64, cfg: &WatchdogConfig) -> GuardState {
    match last_allclear {
        Some(t) if now - t <= cfg.receiver_timeout => GuardState::Run,
        _ => GuardState::Shutdown,
    }
}

/// Consumer-side deadman. Starts in shutdown; a seq regression latches
/// shutdown until [`ReceiverGuard::reset`].
#[derive(Debug, Clone, Default)]
pub struct ReceiverGuard {
    pub last_allclear: Option<f64>,
    pub last_seq: Option<u64>,
    pub replay_detected: bool,
}

impl ReceiverGuard {
    pub fn receive(&mut self, msg: &AllClearMessage) -> Result<(), SafetyError> {
        if let Some(last) = self.last_seq {
            if msg.seq <= last {
                self.replay_detected = true;
                return Err(SafetyError::SeqRegression { last, got: msg.seq });
            }
        }
        self.last_seq = Some(msg.seq);
        self.last_allclear = Some(msg.timestamp);
        Ok(())
    }

    pub fn poll(&self, now: f64, cfg: &WatchdogConfig) -> GuardState {
        if self.replay_detected {
            GuardState::Shutdown
        } else {
            receiver_guard(self.last_allclear, now, cfg)
        }
    }

    pub fn reset(&mut self) {
        self.replay_detected = false;
    }
}
