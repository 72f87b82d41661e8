//! Whether the user is ready for the fork to approach.

use serde::{Deserialize, Serialize};

use super::fusion::MouthEstimate;
use crate::world::WorldState;

/// Fusion may fail this long before the approach pauses.
pub const ESTIMATE_ABSENCE_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotReadyReason {
    MouthClosed,
    Talking,
    NoEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReadinessState {
    Ready,
    NotReady(NotReadyReason),
}

impl ReadinessState {
    pub fn is_ready(self) -> bool {
        self == ReadinessState::Ready
    }
}

/// `last_estimate_time` is the timestamp of the most recent successful
/// fusion, if any. Reasons are checked in the order no_estimate, talking,
/// mouth_closed.
pub fn check_readiness(
    w: &WorldState,
    fused: Option<&MouthEstimate>,
    last_estimate_time: Option<f64>,
) -> ReadinessState {
    let fresh = fused.is_some()
        || last_estimate_time.is_some_and(|t| w.time - t <= ESTIMATE_ABSENCE_LIMIT + 1e-9);
    if !fresh {
        ReadinessState::NotReady(NotReadyReason::NoEstimate)
    } else if w.talking() {
        ReadinessState::NotReady(NotReadyReason::Talking)
    } else if !w.mouth_open() {
        ReadinessState::NotReady(NotReadyReason::MouthClosed)
    } else {
        ReadinessState::Ready
    }
}
