//! Controller stack: retiming, force gating, compliant control and the
//! exclusive manager that routes one command per tick.

pub mod compliant;
pub mod gate;
pub mod manager;
pub mod retime;

pub use compliant::{tick_compliant, ImpedanceGains};
pub use gate::{tick_gated_velocity, AbortReason, ForceGate, GateConfig, GateOutcome};
pub use manager::{
    switch_controller, ControlIntent, ControllerKind, ControllerManager, ControllerManagerState,
    ManagerError, Routed,
};
pub use retime::{retime_trajectory, JointLimits, RetimeError, TimedTrajectory, TimedWaypoint};

/// Acceleration limit used by the feeding trees, rad/s².
pub const DEFAULT_ACCELERATION: f64 = 2.0;
