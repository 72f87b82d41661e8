//! Bandit contexts: visual features known before an attempt and haptic
//! features known only after it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensors::ForceTorqueReading;
use crate::world::{FoodItem, CONTROL_DT};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContextError {
    #[error("unknown food class {0:?}")]
    UnknownFoodClass(String),
    #[error("force/torque series is empty")]
    EmptySeries,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoodClassInfo {
    pub name: &'static str,
    /// Nominal extents, meters.
    pub extents: [f64; 3],
    /// Prior tine resistance, N/m.
    pub resistance: f64,
}

pub const FOOD_CATALOG: [FoodClassInfo; 6] = [
    FoodClassInfo {
        name: "banana-slice",
        extents: [0.030, 0.030, 0.012],
        resistance: 120.0,
    },
    FoodClassInfo {
        name: "grape",
        extents: [0.024, 0.024, 0.024],
        resistance: 180.0,
    },
    FoodClassInfo {
        name: "carrot",
        extents: [0.035, 0.012, 0.012],
        resistance: 300.0,
    },
    FoodClassInfo {
        name: "noodles",
        extents: [0.050, 0.040, 0.015],
        resistance: 60.0,
    },
    FoodClassInfo {
        name: "rice",
        extents: [0.040, 0.040, 0.012],
        resistance: 40.0,
    },
    FoodClassInfo {
        name: "mashed-potato",
        extents: [0.050, 0.050, 0.020],
        resistance: 30.0,
    },
];

pub fn food_class_index(name: &str) -> Result<usize, ContextError> {
    FOOD_CATALOG
        .iter()
        .position(|c| c.name == name)
        .ok_or_else(|| ContextError::UnknownFoodClass(name.to_string()))
}

pub fn food_class_info(name: &str) -> Result<&'static FoodClassInfo, ContextError> {
    food_class_index(name).map(|i| &FOOD_CATALOG[i])
}

pub const EXTENT_SCALE: f64 = 0.04;
pub const RESISTANCE_SCALE: f64 = 300.0;
pub const VISUAL_DIM: usize = FOOD_CATALOG.len() + 5;
pub const HAPTIC_DIM: usize = 5;
pub const CONTEXT_DIM: usize = VISUAL_DIM + HAPTIC_DIM;

/// One-hot class, extents / 4 cm, prior resistance / 300 N/m, then a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualContext {
    pub food_class: String,
    pub features: Vec<f64>,
}

impl VisualContext {
    pub fn from_food(item: &FoodItem) -> Result<Self, ContextError> {
        let class = food_class_index(&item.food_class)?;
        let mut features = vec![0.0; VISUAL_DIM];
        features[class] = 1.0;
        let c = FOOD_CATALOG.len();
        for i in 0..3 {
            features[c + i] = item.size[i] / EXTENT_SCALE;
        }
        features[c + 3] = FOOD_CATALOG[class].resistance / RESISTANCE_SCALE;
        features[c + 4] = 1.0;
        Ok(Self {
            food_class: item.food_class.clone(),
            features,
        })
    }
}

/// Raw haptic statistics: peak |f| (N), mean |f| (N), peak |τ| (N·m),
/// impulse Σ|f|·dt (N·s), contact duration (s).
pub type HapticFeatures = [f64; HAPTIC_DIM];

/// Force magnitude above which a sample counts as contact.
pub const CONTACT_FORCE: f64 = 0.2;

pub fn haptic_features(series: &[ForceTorqueReading]) -> Result<HapticFeatures, ContextError> {
    if series.is_empty() {
        return Err(ContextError::EmptySeries);
    }
    let mut peak_f: f64 = 0.0;
    let mut sum_f = 0.0;
    let mut peak_t: f64 = 0.0;
    let mut contact = 0usize;
    for r in series {
        let f = r.force_norm();
        peak_f = peak_f.max(f);
        peak_t = peak_t.max(r.torque_norm());
        sum_f += f;
        if f > CONTACT_FORCE {
            contact += 1;
        }
    }
    let n = series.len() as f64;
    Ok([
        peak_f,
        sum_f / n,
        peak_t,
        sum_f * CONTROL_DT,
        contact as f64 * CONTROL_DT,
    ])
}

/// Running per-feature moments (Welford) used for z-scoring.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HapticNormalizer {
    pub count: u64,
    pub mean: HapticFeatures,
    pub m2: HapticFeatures,
}

impl HapticNormalizer {
    pub fn observe(&mut self, x: &HapticFeatures) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..HAPTIC_DIM {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    pub fn std(&self) -> HapticFeatures {
        std::array::from_fn(|i| {
            if self.count < 2 {
                1.0
            } else {
                let s = (self.m2[i] / (self.count - 1) as f64).sqrt();
                if s > 1e-9 {
                    s
                } else {
                    1.0
                }
            }
        })
    }

    pub fn normalize(&self, x: &HapticFeatures) -> HapticFeatures {
        let s = self.std();
        std::array::from_fn(|i| (x[i] - self.mean[i]) / s[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HapticContext {
    pub raw: HapticFeatures,
    pub z: HapticFeatures,
}

/// Features of an attempt's series, z-scored by the current moments.
pub fn compute_posthoc_context(
    series: &[ForceTorqueReading],
    moments: &HapticNormalizer,
) -> Result<HapticContext, ContextError> {
    let raw = haptic_features(series)?;
    Ok(HapticContext {
        raw,
        z: moments.normalize(&raw),
    })
}
