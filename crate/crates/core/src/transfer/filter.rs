//! Likely-range outlier rejection for mouth estimates.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::fusion::MouthEstimate;
use crate::world::pose::vec3_serde;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelyRange {
    #[serde(with = "vec3_serde")]
    pub center: Vector3<f64>,
    /// > 0 per axis.
    #[serde(with = "vec3_serde")]
    pub half_extents: Vector3<f64>,
    /// m/s
    pub max_speed: f64,
}

pub const DEFAULT_MAX_SPEED: f64 = 10.0;
pub const DEFAULT_MARGIN: f64 = 0.10;

impl LikelyRange {
    /// Bounding box of `samples` grown by `margin` on every side.
    pub fn calibrate(samples: &[Vector3<f64>], margin: f64, max_speed: f64) -> Option<Self> {
        let first = samples.first()?;
        let (mut lo, mut hi) = (*first, *first);
        for p in samples {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Some(Self {
            center: (lo + hi) * 0.5,
            half_extents: (hi - lo) * 0.5 + Vector3::repeat(margin),
            max_speed,
        })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let d = p - self.center;
        (0..3).all(|i| d[i].abs() <= self.half_extents[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    OutOfRange,
    ImplausibleJump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterVerdict {
    Accept,
    Reject(RejectReason),
}

/// Implied speed between two estimates; infinite for a move in zero time.
pub fn implied_speed(a: &MouthEstimate, b: &MouthEstimate) -> f64 {
    let d = (b.pose.position - a.pose.position).norm();
    let dt = (b.timestamp - a.timestamp).abs();
    if dt > 0.0 {
        d / dt
    } else if d == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn filter_outliers(
    est: &MouthEstimate,
    range: &LikelyRange,
    prev: Option<&MouthEstimate>,
) -> FilterVerdict {
    if !range.contains(&est.pose.position) {
        return FilterVerdict::Reject(RejectReason::OutOfRange);
    }
    if let Some(prev) = prev {
        if implied_speed(prev, est) > range.max_speed {
            return FilterVerdict::Reject(RejectReason::ImplausibleJump);
        }
    }
    FilterVerdict::Accept
}
