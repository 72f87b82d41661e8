//! Confidence-weighted fusion of per-camera mouth observations.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensors::CameraObservation;
use crate::world::Pose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MouthEstimate {
    pub pose: Pose,
    /// In (0, 1].
    pub confidence: f64,
    pub timestamp: f64,
    /// Contributing camera ids, ascending, never empty.
    pub sources: Vec<u8>,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum FusionError {
    #[error("no camera produced a valid mouth observation")]
    NoValidObservation,
}

/// Positions are averaged linearly; orientations by a normalized weighted
/// quaternion sum after aligning each sign with the first contributor.
/// Fused confidence is `1 − Π(1 − cᵢ)`.
pub fn fuse_mouth_estimates(obs: &[CameraObservation]) -> Result<MouthEstimate, FusionError> {
    let visible: Vec<(&CameraObservation, Pose)> = obs
        .iter()
        .filter(|o| !o.occluded && o.confidence > 0.0)
        .filter_map(|o| o.mouth_pose_estimate.map(|p| (o, p)))
        .collect();
    let Some((first, first_pose)) = visible.first() else {
        return Err(FusionError::NoValidObservation);
    };
    let total: f64 = visible.iter().map(|(o, _)| o.confidence).sum();
    let reference = first_pose.orientation.into_inner();
    let mut position = Vector3::zeros();
    let mut q = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    let mut miss = 1.0;
    for (o, p) in &visible {
        let w = o.confidence / total;
        position += p.position * w;
        let mut pq = p.orientation.into_inner();
        if pq.dot(&reference) < 0.0 {
            pq = -pq;
        }
        q += pq * w;
        miss *= 1.0 - o.confidence;
    }
    let mut sources: Vec<u8> = visible.iter().map(|(o, _)| o.camera_id).collect();
    sources.sort_unstable();
    sources.dedup();
    Ok(MouthEstimate {
        pose: Pose::new(position, UnitQuaternion::new_normalize(q)),
        confidence: (1.0 - miss).max(f64::MIN_POSITIVE),
        timestamp: first.timestamp,
        sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(id: u8, p: Option<Vector3<f64>>, c: f64) -> CameraObservation {
        CameraObservation {
            camera_id: id,
            mouth_pose_estimate: p.map(|p| Pose::new(p, UnitQuaternion::identity())),
            confidence: if p.is_some() { c } else { 0.0 },
            occluded: p.is_none(),
            timestamp: 1.0,
        }
    }

    #[test]
    fn equal_confidence_midpoint() {
        let p = Vector3::new(0.1, 0.2, 0.3);
        let d = Vector3::new(0.01, 0.0, -0.02);
        let f = fuse_mouth_estimates(&[obs(0, Some(p), 0.6), obs(1, Some(p + d), 0.6)]).unwrap();
        assert!((f.pose.position - (p + d * 0.5)).norm() < 1e-15);
        assert_eq!(f.sources, vec![0, 1]);
    }

    #[test]
    fn one_occluded_passes_other_through() {
        let p = Vector3::new(0.1, 0.2, 0.3);
        let f = fuse_mouth_estimates(&[obs(0, None, 0.0), obs(1, Some(p), 0.4)]).unwrap();
        assert_eq!(f.pose.position, p);
        assert_eq!(f.sources, vec![1]);
        assert!((f.confidence - 0.4).abs() < 1e-15);
    }

    #[test]
    fn all_occluded() {
        assert_eq!(
            fuse_mouth_estimates(&[obs(0, None, 0.0), obs(1, None, 0.0)]),
            Err(FusionError::NoValidObservation)
        );
    }

    #[test]
    fn opposite_sign_quaternions_blend() {
        let q = UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3);
        let neg = UnitQuaternion::new_unchecked(-q.into_inner());
        let a = CameraObservation {
            mouth_pose_estimate: Some(Pose::new(Vector3::zeros(), q)),
            ..obs(0, Some(Vector3::zeros()), 0.5)
        };
        let b = CameraObservation {
            mouth_pose_estimate: Some(Pose::new(Vector3::zeros(), neg)),
            ..obs(1, Some(Vector3::zeros()), 0.5)
        };
        let f = fuse_mouth_estimates(&[a, b]).unwrap();
        assert!(f.pose.orientation.angle_to(&q) < 1e-12);
    }
}
