//! Offline acquisition outcome oracle: a success draw from the food's hidden
//! per-arm probabilities and a synthetic wrist F/T series shaped by the
//! action's in-food and extraction parameters.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::context::{food_class_info, haptic_features, HapticNormalizer};
use super::dataset::TrajectoryDataset;
use super::kmedoids::ActionLibrary;
use super::schema::SchemaAction;
use crate::sensors::ForceTorqueReading;
use crate::world::noise::{rng_for, Stream};
use crate::world::{FoodItem, CONTROL_DT};

/// Attempt-to-attempt spread of effective food resistance (log scale).
pub const RESISTANCE_JITTER: f64 = 0.15;
pub const FORCE_NOISE: f64 = 0.05;
pub const TORQUE_NOISE: f64 = 0.005;
/// Fork length used as the torque lever.
const LEVER: f64 = 0.12;

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionOutcome {
    /// Library arm whose ground truth decided the draw.
    pub arm: usize,
    pub reward: bool,
    pub series: Vec<ForceTorqueReading>,
}

pub fn simulate_acquisition(
    library: &ActionLibrary,
    action: &SchemaAction,
    food: &FoodItem,
    seed: u64,
) -> AcquisitionOutcome {
    let arm = library.nearest(action);
    let mut rng = rng_for(seed, 0, Stream::Acquisition);
    let reward = rng.random::<f64>() < food.success_probability(arm);
    let series = synthetic_series(action, food.resistance, &mut rng);
    AcquisitionOutcome {
        arm,
        reward,
        series,
    }
}

/// Penetrate, dwell with wiggle/twirl/scoop, then lift out; 100 Hz samples.
pub fn synthetic_series(
    action: &SchemaAction,
    resistance: f64,
    rng: &mut impl Rng,
) -> Vec<ForceTorqueReading> {
    let jitter: f64 = Normal::new(0.0, RESISTANCE_JITTER)
        .expect("positive sigma")
        .sample(rng);
    let r = resistance * jitter.exp();
    let depth = action.penetration_depth();
    let peak = r * depth;
    let t_pen = (depth / action.approach_speed()).max(CONTROL_DT);
    let t_dwell = action.in_food_duration();
    let t_ext = (depth / action.lift_speed()).max(CONTROL_DT);
    let t_end = t_pen + t_dwell + t_ext + 0.1;
    let (push_x, push_y) = action.lateral_push();
    let wiggle = 0.2 * action.wiggle_amplitude() / 0.3;
    let n = (t_end / CONTROL_DT).ceil() as usize;
    let mut gauss = || -> f64 { StandardNormal.sample(rng) };
    (0..n)
        .map(|k| {
            let t = k as f64 * CONTROL_DT;
            let mut f = Vector3::zeros();
            let mut tau = Vector3::zeros();
            if t < t_pen {
                f.z = peak * t / t_pen;
            } else if t < t_pen + t_dwell {
                let s = t - t_pen;
                let phase = (s / t_dwell).min(1.0);
                f.z = peak * (1.0 + wiggle * (2.0 * PI * action.wiggle_frequency() * s).sin());
                f.x = r
                    * (action.scoop_radius() * 0.5 * (phase * action.scoop_arc()).sin()
                        + 0.5 * push_x);
                f.y = r * 0.5 * push_y;
                tau.z = 1e-4 * r * action.twirl_angle() * (action.twirl_rate() * s).min(1.0);
            } else if t < t_pen + t_dwell + t_ext {
                let u = (t - t_pen - t_dwell) / t_ext;
                f.z = peak * (1.0 - u);
                tau.y = 2e-5 * r * action.tilt_back_angle();
            }
            tau += Vector3::new(0.0, 0.0, LEVER).cross(&f);
            f += Vector3::new(gauss(), gauss(), gauss()) * FORCE_NOISE;
            tau += Vector3::new(gauss(), gauss(), gauss()) * TORQUE_NOISE;
            ForceTorqueReading {
                force: f,
                torque: tau,
                timestamp: t,
                seq: k as u64,
            }
        })
        .collect()
}

/// Moments of raw haptic features over the expert dataset, each point
/// simulated once on its own food class's nominal resistance.
pub fn dataset_moments(data: &TrajectoryDataset, seed: u64) -> HapticNormalizer {
    let mut moments = HapticNormalizer::default();
    for (i, p) in data.points.iter().enumerate() {
        let resistance = food_class_info(&p.food_class).map_or(100.0, |c| c.resistance);
        let mut rng = rng_for(seed, i as u64, Stream::Acquisition);
        let series = synthetic_series(&p.action, resistance, &mut rng);
        let raw = haptic_features(&series).expect("synthetic series is non-empty");
        moments.observe(&raw);
    }
    moments
}
