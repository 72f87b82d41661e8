//! Torque-limited joint impedance control.

use serde::{Deserialize, Serialize};

use crate::world::pose::vec6_serde;
use crate::world::Joints;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceGains {
    /// N·m/rad
    #[serde(with = "vec6_serde")]
    pub stiffness: Joints,
    /// N·m·s/rad
    #[serde(with = "vec6_serde")]
    pub damping: Joints,
    /// N·m
    #[serde(with = "vec6_serde")]
    pub torque_limit: Joints,
}

impl Default for ImpedanceGains {
    fn default() -> Self {
        Self {
            stiffness: Joints::repeat(25.0),
            damping: Joints::repeat(1.0),
            torque_limit: Joints::repeat(5.0),
        }
    }
}

impl ImpedanceGains {
    pub fn validate(&self) -> Result<(), String> {
        let all_pos = |v: &Joints| v.iter().all(|x| *x > 0.0 && x.is_finite());
        if all_pos(&self.stiffness) && all_pos(&self.damping) && all_pos(&self.torque_limit) {
            Ok(())
        } else {
            Err("impedance gains must be positive and finite".into())
        }
    }
}

/// `K⊙(q* − q) + D⊙(v* − v)`, clamped per joint. The clamp is applied last.
pub fn tick_compliant(
    q: &Joints,
    v: &Joints,
    target_q: &Joints,
    target_v: &Joints,
    gains: &ImpedanceGains,
) -> Joints {
    let raw = gains.stiffness.component_mul(&(target_q - q))
        + gains.damping.component_mul(&(target_v - v));
    raw.zip_map(&gains.torque_limit, |t, l| t.clamp(-l, l))
}
