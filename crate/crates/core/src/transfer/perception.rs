//! Per-tick mouth perception: fuse, calibrate the likely range, filter,
//! smooth and watch for spasms.

use std::collections::VecDeque;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::filter::{filter_outliers, implied_speed, FilterVerdict, LikelyRange, RejectReason};
use super::fusion::{fuse_mouth_estimates, MouthEstimate};
use super::spasm::{detect_spasm_smoothed, DEFAULT_SMOOTHING, DEFAULT_SPASM_THRESHOLD};
use crate::sensors::CameraObservation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    /// Seconds of observation used to calibrate the likely range.
    pub calibration_time: f64,
    pub range_margin: f64,
    pub max_speed: f64,
    pub spasm_threshold: f64,
    pub smoothing: usize,
    /// Accepted estimates averaged into the servo target.
    pub target_smoothing: usize,
    /// A pre-set range skips calibration.
    pub range: Option<LikelyRange>,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            calibration_time: 5.0,
            range_margin: super::filter::DEFAULT_MARGIN,
            max_speed: super::filter::DEFAULT_MAX_SPEED,
            spasm_threshold: DEFAULT_SPASM_THRESHOLD,
            smoothing: DEFAULT_SMOOTHING,
            target_smoothing: 8,
            range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerceptionStats {
    pub fused: u64,
    pub no_observation: u64,
    pub accepted: u64,
    pub rejected_range: u64,
    pub rejected_jump: u64,
    pub spasm_ticks: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionFrame {
    pub fused: Option<MouthEstimate>,
    pub verdict: Option<FilterVerdict>,
    /// Mean of recent accepted positions with the latest orientation.
    pub smoothed: Option<MouthEstimate>,
    pub spasm: bool,
}

#[derive(Debug, Clone)]
pub struct Perception {
    pub config: PerceptionConfig,
    range: Option<LikelyRange>,
    calibration: Vec<Vector3<f64>>,
    started: Option<f64>,
    history: VecDeque<MouthEstimate>,
    last_fused_time: Option<f64>,
    pub stats: PerceptionStats,
}

const HISTORY_LEN: usize = 64;

impl Perception {
    pub fn new(config: PerceptionConfig) -> Self {
        Self {
            range: config.range,
            config,
            calibration: Vec::new(),
            started: None,
            history: VecDeque::with_capacity(HISTORY_LEN),
            last_fused_time: None,
            stats: PerceptionStats::default(),
        }
    }

    pub fn range(&self) -> Option<&LikelyRange> {
        self.range.as_ref()
    }

    pub fn last_fused_time(&self) -> Option<f64> {
        self.last_fused_time
    }

    pub fn last_accepted(&self) -> Option<&MouthEstimate> {
        self.history.back()
    }

    pub fn update(&mut self, obs: &[CameraObservation], now: f64) -> PerceptionFrame {
        let started = *self.started.get_or_insert(now);
        let fused = fuse_mouth_estimates(obs).ok();
        let Some(est) = fused.clone() else {
            self.stats.no_observation += 1;
            return PerceptionFrame {
                fused: None,
                verdict: None,
                smoothed: self.smoothed(),
                spasm: false,
            };
        };
        self.stats.fused += 1;
        self.last_fused_time = Some(now);
        if self.range.is_none() {
            self.calibration.push(est.pose.position);
            if now - started >= self.config.calibration_time - 1e-9 {
                self.range = LikelyRange::calibrate(
                    &self.calibration,
                    self.config.range_margin,
                    self.config.max_speed,
                );
                self.calibration.clear();
            }
        }
        let prev = self.history.back();
        let verdict = match &self.range {
            Some(r) => filter_outliers(&est, r, prev),
            None if prev.is_some_and(|p| implied_speed(p, &est) > self.config.max_speed) => {
                FilterVerdict::Reject(RejectReason::ImplausibleJump)
            }
            None => FilterVerdict::Accept,
        };
        let spasm = match verdict {
            FilterVerdict::Accept => {
                self.stats.accepted += 1;
                if self.history.len() == HISTORY_LEN {
                    self.history.pop_front();
                }
                self.history.push_back(est);
                let h = self.history.make_contiguous();
                detect_spasm_smoothed(h, self.config.spasm_threshold, self.config.smoothing)
                    .unwrap_or(false)
            }
            FilterVerdict::Reject(RejectReason::OutOfRange) => {
                self.stats.rejected_range += 1;
                true
            }
            FilterVerdict::Reject(RejectReason::ImplausibleJump) => {
                self.stats.rejected_jump += 1;
                true
            }
        };
        if spasm {
            self.stats.spasm_ticks += 1;
        }
        PerceptionFrame {
            fused,
            verdict: Some(verdict),
            smoothed: self.smoothed(),
            spasm,
        }
    }

    fn smoothed(&self) -> Option<MouthEstimate> {
        let latest = self.history.back()?;
        let n = self.config.target_smoothing.clamp(1, self.history.len());
        let p = self
            .history
            .iter()
            .rev()
            .take(n)
            .map(|e| e.pose.position)
            .sum::<Vector3<f64>>()
            / n as f64;
        let mut out = latest.clone();
        out.pose.position = p;
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Pose;

    fn obs(p: Vector3<f64>, t: f64) -> Vec<CameraObservation> {
        vec![CameraObservation {
            camera_id: 0,
            mouth_pose_estimate: Some(Pose::new(p, Default::default())),
            confidence: 0.5,
            occluded: false,
            timestamp: t,
        }]
    }

    #[test]
    fn calibrates_then_rejects_outliers() {
        let mut per = Perception::new(PerceptionConfig::default());
        let base = Vector3::new(0.0, 0.45, 0.45);
        for k in 0..=500 {
            let t = k as f64 * 0.01;
            assert!(!per.update(&obs(base, t), t).spasm);
        }
        assert!(per.range().is_some());
        let f = per.update(&obs(base + Vector3::new(1.0, 0.0, 0.0), 5.01), 5.01);
        assert_eq!(
            f.verdict,
            Some(FilterVerdict::Reject(RejectReason::OutOfRange))
        );
        assert!(f.spasm);
    }

    #[test]
    fn step_is_flagged() {
        let mut per = Perception::new(PerceptionConfig::default());
        let base = Vector3::new(0.0, 0.45, 0.45);
        let mut fired = false;
        for k in 0..100 {
            let t = k as f64 * 0.01;
            let p = if k >= 50 {
                base + Vector3::new(0.03, 0.0, 0.0)
            } else {
                base
            };
            fired |= per.update(&obs(p, t), t).spasm;
        }
        assert!(fired);
    }
}
