//! Cartesian tip motion realizing one schema action on a food item.
//!
//! Poses are tip poses in the world frame. Tool z is the fork direction.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::schema::SchemaAction;
use crate::world::kinematics::tool_orientation;
use crate::world::{approach_frame, food_frame, FoodItem, Pose, WorldError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaPhase {
    /// Gated descent from the pre-approach pose to the food surface.
    Approach,
    PreContactPause,
    /// Compliant penetration, wiggle, twirl, scoop, push and tilt.
    InFood,
    /// Gated lift out of the food.
    Extraction,
    PostExitPause,
}

impl SchemaPhase {
    pub fn compliant(self) -> bool {
        self == SchemaPhase::InFood
    }
}

/// Penetration never goes deeper than this fraction of the food height.
const MAX_DEPTH_FRACTION: f64 = 0.8;
/// Pitch change accumulated during the approach is capped to this, rad.
const MAX_APPROACH_PITCH_CHANGE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaMotion {
    pub action: SchemaAction,
    /// Tip pose where the fork meets the food surface.
    pub entry: Pose,
    pub pre_approach: Pose,
    scoop_direction: Vector3<f64>,
    push: Vector3<f64>,
    depth: f64,
    t_approach: f64,
    t_pause: f64,
    t_in_food: f64,
    t_tilt: f64,
    t_extract: f64,
    t_post: f64,
}

impl SchemaMotion {
    /// `flip` turns the approach half a turn about vertical; foods are
    /// symmetric about their major axis so both are valid.
    pub fn plan(food: &FoodItem, action: &SchemaAction, flip: bool) -> Result<Self, WorldError> {
        let mut frame = food_frame(food).pose;
        if flip {
            frame = frame.compose(&Pose::from_axis_angle(Vector3::z(), std::f64::consts::PI));
        }
        let mut params = action.approach_params();
        let approach_distance = params.offset.z;
        params.offset.z = 0.0;
        let af = approach_frame(&frame, &params)?;
        let pointing = af.x_axis();
        let orientation = tool_orientation(&pointing, &af.z_axis());
        let top = food.top();
        let entry = Pose::new(Vector3::new(af.position.x, af.position.y, top), orientation);
        let pre_approach = Pose::new(entry.position - pointing * approach_distance, orientation);
        let down = (-pointing.z).max(0.05);
        let depth = action
            .penetration_depth()
            .min(MAX_DEPTH_FRACTION * food.size.z / down);
        let horizontal = Vector3::new(pointing.x, pointing.y, 0.0);
        let scoop_direction = if horizontal.norm() > 1e-6 {
            horizontal.normalize()
        } else {
            frame.x_axis()
        };
        let (px, py) = action.lateral_push();
        let push = frame.x_axis() * px + frame.y_axis() * py;
        Ok(Self {
            action: *action,
            entry,
            pre_approach,
            scoop_direction,
            push,
            depth,
            t_approach: approach_distance / action.approach_speed(),
            t_pause: action.pre_contact_pause(),
            t_in_food: action.in_food_duration(),
            t_tilt: action.tilt_back_angle() / action.tilt_rate(),
            t_extract: action.lift_height() / action.lift_speed(),
            t_post: action.post_exit_pause(),
        })
    }

    pub fn duration(&self) -> f64 {
        self.t_approach + self.t_pause + self.t_in_food + self.t_tilt + self.t_extract + self.t_post
    }

    pub fn penetration_depth(&self) -> f64 {
        self.depth
    }

    fn boundaries(&self) -> [f64; 5] {
        let a = self.t_approach;
        let b = a + self.t_pause;
        let c = b + self.t_in_food + self.t_tilt;
        let d = c + self.t_extract;
        [a, b, c, d, d + self.t_post]
    }

    pub fn phase_at(&self, t: f64) -> SchemaPhase {
        let [a, b, c, d, _] = self.boundaries();
        if t < a {
            SchemaPhase::Approach
        } else if t < b {
            SchemaPhase::PreContactPause
        } else if t < c {
            SchemaPhase::InFood
        } else if t < d {
            SchemaPhase::Extraction
        } else {
            SchemaPhase::PostExitPause
        }
    }

    fn rotate_local(pose: &Pose, axis: Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
        pose.orientation * UnitQuaternion::from_scaled_axis(axis * angle)
    }

    fn approach_pitch(&self, s: f64) -> f64 {
        (self.action.fork_pitch_rate() * s).clamp(-MAX_APPROACH_PITCH_CHANGE, MAX_APPROACH_PITCH_CHANGE)
    }

    /// Tip pose at the end of the in-food phase, relative offsets included.
    fn in_food_pose(&self, s: f64) -> Pose {
        let a = &self.action;
        let pitched = Pose::new(
            self.entry.position,
            Self::rotate_local(&self.entry, Vector3::y(), self.approach_pitch(self.t_approach)),
        );
        let pointing = pitched.z_axis();
        let t_pen = (self.depth / a.approach_speed()).min(0.5 * self.t_in_food);
        let u = (s / self.t_in_food).clamp(0.0, 1.0);
        let mut p = pitched.position + pointing * self.depth * (s / t_pen).min(1.0);
        let arc = a.scoop_arc() * u;
        let r = a.scoop_radius();
        p += self.scoop_direction * r * arc.sin() + Vector3::z() * r * (1.0 - arc.cos());
        p += self.push * u;
        let wiggle = if s < self.t_in_food {
            a.wiggle_amplitude() * (2.0 * std::f64::consts::PI * a.wiggle_frequency() * s).sin()
        } else {
            0.0
        };
        let tilt = (a.tilt_rate() * (s - self.t_in_food).max(0.0)).min(a.tilt_back_angle());
        let twirl = (a.twirl_rate() * s).min(a.twirl_angle());
        let q = pitched.orientation
            * UnitQuaternion::from_scaled_axis(Vector3::y() * (wiggle - tilt))
            * UnitQuaternion::from_scaled_axis(Vector3::z() * twirl);
        Pose::new(p, q)
    }

    fn exit_direction(&self) -> Vector3<f64> {
        let (ex, ey) = self.action.exit_angle();
        Vector3::new(ey.sin(), -ex.sin(), 1.0).normalize()
    }

    /// Desired tip pose `t` seconds after the motion starts; holds the final
    /// pose afterwards.
    pub fn pose_at(&self, t: f64) -> Pose {
        let [a, b, c, d, _] = self.boundaries();
        let t = t.max(0.0);
        if t < a {
            let s = t / a;
            let p = self.pre_approach.position.lerp(&self.entry.position, s);
            return Pose::new(
                p,
                Self::rotate_local(&self.entry, Vector3::y(), self.approach_pitch(t)),
            );
        }
        if t < b {
            return self.in_food_pose(0.0);
        }
        if t < c {
            return self.in_food_pose(t - b);
        }
        let end_in_food = self.in_food_pose(c - b);
        let lift = (t - c).min(d - c) * self.action.lift_speed();
        Pose::new(
            end_in_food.position + self.exit_direction() * lift,
            end_in_food.orientation,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquire::dataset::Technique;
    use std::collections::BTreeMap;

    fn grape() -> FoodItem {
        FoodItem {
            id: "g".into(),
            food_class: "grape".into(),
            pose: Pose::from_translation(0.3, 0.35, 0.012),
            major_axis: Vector3::x(),
            size: Vector3::repeat(0.024),
            resistance: 180.0,
            ground_truth_success: BTreeMap::new(),
        }
    }

    #[test]
    fn motion_is_continuous_and_bounded() {
        for tech in [Technique::Skewer, Technique::Scoop, Technique::Twirl] {
            let action = SchemaAction::from_normalized(&tech.center());
            let m = SchemaMotion::plan(&grape(), &action, false).unwrap();
            assert!((m.pose_at(0.0).position - m.pre_approach.position).norm() < 1e-12);
            let mut prev = m.pose_at(0.0);
            let mut t = 0.0;
            while t < m.duration() + 0.1 {
                t += 0.01;
                let p = m.pose_at(t);
                assert!((p.position - prev.position).norm() < 0.01, "{tech:?} jump at {t}");
                assert!(prev.angle_to(&p) < 0.1, "{tech:?} rotation jump at {t}");
                assert!(p.position.z > 0.0, "{tech:?} below plate at {t}");
                prev = p;
            }
            let deepest = (0..(m.duration() * 100.0) as usize)
                .map(|k| m.pose_at(k as f64 * 0.01).position.z)
                .fold(f64::INFINITY, f64::min);
            assert!(deepest < grape().top());
        }
    }

    #[test]
    fn phases_in_order() {
        let action = SchemaAction::from_normalized(&Technique::Skewer.center());
        let m = SchemaMotion::plan(&grape(), &action, true).unwrap();
        let mut seen = Vec::new();
        let mut t = 0.0;
        while t < m.duration() + 0.05 {
            let p = m.phase_at(t);
            if seen.last() != Some(&p) {
                seen.push(p);
            }
            t += 0.005;
        }
        assert_eq!(seen.first(), Some(&SchemaPhase::Approach));
        assert!(seen.contains(&SchemaPhase::InFood));
        assert!(seen.contains(&SchemaPhase::Extraction));
    }
}
