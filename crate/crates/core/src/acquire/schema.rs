//! The 26-dimensional acquisition schema.
//!
//! Components are grouped approach (0..8), in-food (8..18) and extraction
//! (18..26). Clustering and the dataset work in box-normalized coordinates
//! where every component spans `[0, 1]`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::ApproachParams;

pub const SCHEMA_DIM: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub name: &'static str,
    pub unit: &'static str,
    pub lo: f64,
    pub hi: f64,
}

const fn c(name: &'static str, unit: &'static str, lo: f64, hi: f64) -> Component {
    Component { name, unit, lo, hi }
}

pub const COMPONENTS: [Component; SCHEMA_DIM] = [
    c("approach_offset_x", "m", -0.03, 0.03),
    c("approach_offset_y", "m", -0.03, 0.03),
    c("approach_offset_z", "m", 0.03, 0.10),
    c("approach_pitch", "rad", 0.2, FRAC_PI_2),
    c("approach_roll", "rad", -0.8, 0.8),
    c("approach_speed", "m/s", 0.02, 0.10),
    c("fork_pitch_rate", "rad/s", -0.5, 0.5),
    c("pre_contact_pause", "s", 0.0, 0.5),
    c("penetration_depth", "m", 0.005, 0.025),
    c("wiggle_amplitude", "rad", 0.0, 0.3),
    c("wiggle_frequency", "Hz", 0.0, 3.0),
    c("twirl_angle", "rad", 0.0, PI),
    c("twirl_rate", "rad/s", 0.5, 3.0),
    c("scoop_radius", "m", 0.0, 0.05),
    c("scoop_arc", "rad", 0.0, 1.57),
    c("in_food_duration", "s", 0.2, 2.0),
    c("lateral_push_x", "m", -0.02, 0.02),
    c("lateral_push_y", "m", -0.02, 0.02),
    c("tilt_back_angle", "rad", 0.0, 0.8),
    c("tilt_rate", "rad/s", 0.2, 2.0),
    c("lift_height", "m", 0.03, 0.12),
    c("lift_speed", "m/s", 0.02, 0.12),
    c("exit_angle_x", "rad", -0.5, 0.5),
    c("exit_angle_y", "rad", -0.5, 0.5),
    c("post_exit_pause", "s", 0.0, 0.5),
    c("retract_speed", "m/s", 0.05, 0.2),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("schema component {index} ({name}) = {value} outside [{lo}, {hi}]")]
    OutOfBounds {
        index: usize,
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("schema action must have {SCHEMA_DIM} components, got {0}")]
    WrongLength(usize),
}

/// One acquisition attempt's parameters, physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SchemaAction(pub [f64; SCHEMA_DIM]);

impl TryFrom<Vec<f64>> for SchemaAction {
    type Error = SchemaError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let arr: [f64; SCHEMA_DIM] = v
            .try_into()
            .map_err(|v: Vec<f64>| SchemaError::WrongLength(v.len()))?;
        let a = SchemaAction(arr);
        a.validate()?;
        Ok(a)
    }
}

impl From<SchemaAction> for Vec<f64> {
    fn from(a: SchemaAction) -> Self {
        a.0.to_vec()
    }
}

impl SchemaAction {
    pub fn validate(&self) -> Result<(), SchemaError> {
        for (index, (v, comp)) in self.0.iter().zip(COMPONENTS.iter()).enumerate() {
            if !(*v >= comp.lo && *v <= comp.hi) {
                return Err(SchemaError::OutOfBounds {
                    index,
                    name: comp.name,
                    value: *v,
                    lo: comp.lo,
                    hi: comp.hi,
                });
            }
        }
        Ok(())
    }

    pub fn normalized(&self) -> [f64; SCHEMA_DIM] {
        std::array::from_fn(|i| {
            (self.0[i] - COMPONENTS[i].lo) / (COMPONENTS[i].hi - COMPONENTS[i].lo)
        })
    }

    /// Inverse of [`Self::normalized`]; inputs are clipped to `[0, 1]`.
    pub fn from_normalized(u: &[f64; SCHEMA_DIM]) -> Self {
        SchemaAction(std::array::from_fn(|i| {
            let comp = COMPONENTS[i];
            comp.lo + u[i].clamp(0.0, 1.0) * (comp.hi - comp.lo)
        }))
    }

    /// Center of the box.
    pub fn midpoint() -> Self {
        Self::from_normalized(&[0.5; SCHEMA_DIM])
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        COMPONENTS
            .iter()
            .position(|c| c.name == name)
            .map(|i| self.0[i])
    }

    pub fn approach_offset(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }
    pub fn approach_pitch(&self) -> f64 {
        self.0[3]
    }
    pub fn approach_roll(&self) -> f64 {
        self.0[4]
    }
    pub fn approach_speed(&self) -> f64 {
        self.0[5]
    }
    pub fn fork_pitch_rate(&self) -> f64 {
        self.0[6]
    }
    pub fn pre_contact_pause(&self) -> f64 {
        self.0[7]
    }
    pub fn penetration_depth(&self) -> f64 {
        self.0[8]
    }
    pub fn wiggle_amplitude(&self) -> f64 {
        self.0[9]
    }
    pub fn wiggle_frequency(&self) -> f64 {
        self.0[10]
    }
    pub fn twirl_angle(&self) -> f64 {
        self.0[11]
    }
    pub fn twirl_rate(&self) -> f64 {
        self.0[12]
    }
    pub fn scoop_radius(&self) -> f64 {
        self.0[13]
    }
    pub fn scoop_arc(&self) -> f64 {
        self.0[14]
    }
    pub fn in_food_duration(&self) -> f64 {
        self.0[15]
    }
    pub fn lateral_push(&self) -> (f64, f64) {
        (self.0[16], self.0[17])
    }
    pub fn tilt_back_angle(&self) -> f64 {
        self.0[18]
    }
    pub fn tilt_rate(&self) -> f64 {
        self.0[19]
    }
    pub fn lift_height(&self) -> f64 {
        self.0[20]
    }
    pub fn lift_speed(&self) -> f64 {
        self.0[21]
    }
    pub fn exit_angle(&self) -> (f64, f64) {
        (self.0[22], self.0[23])
    }
    pub fn post_exit_pause(&self) -> f64 {
        self.0[24]
    }
    pub fn retract_speed(&self) -> f64 {
        self.0[25]
    }

    pub fn approach_params(&self) -> ApproachParams {
        ApproachParams {
            offset: self.approach_offset(),
            pitch: self.approach_pitch(),
            roll: self.approach_roll(),
        }
    }
}

/// Euclidean distance in normalized coordinates.
pub fn normalized_distance(a: &SchemaAction, b: &SchemaAction) -> f64 {
    let (na, nb) = (a.normalized(), b.normalized());
    na.iter()
        .zip(nb.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
