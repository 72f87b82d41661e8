//! Rest-to-rest trapezoidal retiming of joint-space paths.
//!
//! Each segment moves all joints along a straight line in joint space with a
//! shared normalized trapezoid, so every joint starts and stops together. The
//! path parameter's peak rate is set by the most constrained joint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::pose::vec6_serde;
use crate::world::{Joints, CONTROL_DT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetimeError {
    #[error("path needs at least two waypoints")]
    EmptyPath,
    #[error("speed scale {0} outside (0, 1]")]
    InvalidScale(f64),
    #[error("limits must be positive")]
    InvalidLimits,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub velocity: Joints,
    /// May be infinite.
    pub acceleration: Joints,
}

impl JointLimits {
    pub fn new(velocity: Joints, acceleration: Joints) -> Self {
        Self {
            velocity,
            acceleration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedWaypoint {
    pub time: f64,
    #[serde(with = "vec6_serde")]
    pub q: Joints,
    #[serde(with = "vec6_serde")]
    pub v: Joints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedTrajectory {
    pub waypoints: Vec<TimedWaypoint>,
    pub speed_scale: f64,
}

impl TimedTrajectory {
    pub fn duration(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.time)
    }

    pub fn final_q(&self) -> Joints {
        self.waypoints.last().map_or(Joints::zeros(), |w| w.q)
    }

    /// Reference position and velocity at `t`, linear between waypoints and
    /// holding the final configuration afterwards.
    pub fn sample(&self, t: f64) -> (Joints, Joints) {
        let wps = &self.waypoints;
        let Some(last) = wps.last() else {
            return (Joints::zeros(), Joints::zeros());
        };
        if t >= last.time {
            return (last.q, Joints::zeros());
        }
        if t <= wps[0].time {
            return (wps[0].q, wps[0].v);
        }
        let i = wps.partition_point(|w| w.time <= t);
        let (a, b) = (&wps[i - 1], &wps[i]);
        let u = (t - a.time) / (b.time - a.time);
        (a.q + (b.q - a.q) * u, a.v + (b.v - a.v) * u)
    }
}

/// Normalized trapezoid on `s ∈ [0, 1]`.
#[derive(Debug, Clone, Copy)]
struct Profile {
    rate: f64,
    accel: f64,
    ramp: f64,
    duration: f64,
}

impl Profile {
    fn new(max_rate: f64, max_accel: f64) -> Self {
        if max_accel.is_infinite() {
            return Self {
                rate: max_rate,
                accel: f64::INFINITY,
                ramp: 0.0,
                duration: 1.0 / max_rate,
            };
        }
        if max_rate * max_rate / max_accel >= 1.0 {
            let ramp = (1.0 / max_accel).sqrt();
            Self {
                rate: max_accel * ramp,
                accel: max_accel,
                ramp,
                duration: 2.0 * ramp,
            }
        } else {
            let ramp = max_rate / max_accel;
            Self {
                rate: max_rate,
                accel: max_accel,
                ramp,
                duration: 1.0 / max_rate + ramp,
            }
        }
    }

    fn at(&self, tau: f64) -> (f64, f64) {
        let tau = tau.clamp(0.0, self.duration);
        if tau <= 0.0 {
            return (0.0, 0.0);
        }
        if tau >= self.duration {
            return (1.0, 0.0);
        }
        if self.accel.is_infinite() {
            return (self.rate * tau, self.rate);
        }
        if tau < self.ramp {
            (0.5 * self.accel * tau * tau, self.accel * tau)
        } else if tau <= self.duration - self.ramp {
            let s0 = 0.5 * self.accel * self.ramp * self.ramp;
            (s0 + self.rate * (tau - self.ramp), self.rate)
        } else {
            let r = self.duration - tau;
            (1.0 - 0.5 * self.accel * r * r, self.accel * r)
        }
    }
}

/// Retime `waypoints` under per-joint limits. Only velocity limits scale with
/// `speed_scale`; waypoints are sampled every control period plus each
/// segment end.
pub fn retime_trajectory(
    waypoints: &[Joints],
    limits: &JointLimits,
    speed_scale: f64,
) -> Result<TimedTrajectory, RetimeError> {
    if waypoints.len() < 2 {
        return Err(RetimeError::EmptyPath);
    }
    if !(speed_scale > 0.0 && speed_scale <= 1.0) {
        return Err(RetimeError::InvalidScale(speed_scale));
    }
    if limits.velocity.iter().any(|v| !(*v > 0.0 && v.is_finite()))
        || limits.acceleration.iter().any(|a| !(*a > 0.0))
    {
        return Err(RetimeError::InvalidLimits);
    }
    let mut out = vec![TimedWaypoint {
        time: 0.0,
        q: waypoints[0],
        v: Joints::zeros(),
    }];
    let mut t0 = 0.0;
    for pair in waypoints.windows(2) {
        let (from, delta) = (pair[0], pair[1] - pair[0]);
        let mut max_rate = f64::INFINITY;
        let mut max_accel = f64::INFINITY;
        for j in 0..delta.len() {
            let d = delta[j].abs();
            if d > 0.0 {
                max_rate = max_rate.min(limits.velocity[j] * speed_scale / d);
                max_accel = max_accel.min(limits.acceleration[j] / d);
            }
        }
        if max_rate.is_infinite() {
            continue;
        }
        let profile = Profile::new(max_rate, max_accel);
        let steps = (profile.duration / CONTROL_DT).floor() as usize;
        for k in 1..=steps {
            let tau = k as f64 * CONTROL_DT;
            if profile.duration - tau < 1e-9 {
                break;
            }
            let (s, rate) = profile.at(tau);
            out.push(TimedWaypoint {
                time: t0 + tau,
                q: from + delta * s,
                v: delta * rate,
            });
        }
        t0 += profile.duration;
        out.push(TimedWaypoint {
            time: t0,
            q: pair[1],
            v: Joints::zeros(),
        });
    }
    Ok(TimedTrajectory {
        waypoints: out,
        speed_scale,
    })
}
