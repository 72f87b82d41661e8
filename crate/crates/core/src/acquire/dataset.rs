//! Synthetic expert trajectory dataset: a three-mode Gaussian mixture in
//! normalized schema space, one mode per technique.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::schema::{SchemaAction, SchemaError, COMPONENTS, SCHEMA_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    Skewer,
    Scoop,
    Twirl,
}

impl Technique {
    pub const ALL: [Technique; 3] = [Technique::Skewer, Technique::Scoop, Technique::Twirl];

    /// Mode center, normalized coordinates. Unlisted components sit at 0.5.
    pub fn center(self) -> [f64; SCHEMA_DIM] {
        let overrides: &[(&str, f64)] = match self {
            Technique::Skewer => &[
                ("approach_pitch", 0.95),
                ("pre_contact_pause", 0.3),
                ("penetration_depth", 0.8),
                ("wiggle_amplitude", 0.3),
                ("wiggle_frequency", 0.4),
                ("twirl_angle", 0.05),
                ("twirl_rate", 0.3),
                ("scoop_radius", 0.05),
                ("scoop_arc", 0.05),
                ("in_food_duration", 0.3),
                ("tilt_back_angle", 0.3),
                ("lift_height", 0.6),
                ("post_exit_pause", 0.3),
            ],
            Technique::Scoop => &[
                ("approach_pitch", 0.25),
                ("penetration_depth", 0.4),
                ("wiggle_amplitude", 0.1),
                ("wiggle_frequency", 0.2),
                ("twirl_angle", 0.05),
                ("scoop_radius", 0.8),
                ("scoop_arc", 0.8),
                ("lateral_push_x", 0.7),
                ("tilt_back_angle", 0.85),
                ("tilt_rate", 0.4),
            ],
            Technique::Twirl => &[
                ("approach_pitch", 0.9),
                ("penetration_depth", 0.6),
                ("wiggle_amplitude", 0.2),
                ("twirl_angle", 0.85),
                ("twirl_rate", 0.7),
                ("scoop_radius", 0.05),
                ("scoop_arc", 0.05),
                ("in_food_duration", 0.7),
                ("tilt_back_angle", 0.2),
                ("lift_height", 0.8),
            ],
        };
        let mut u = [0.5; SCHEMA_DIM];
        for (name, v) in overrides {
            let i = COMPONENTS
                .iter()
                .position(|c| c.name == *name)
                .expect("technique override names a schema component");
            u[i] = *v;
        }
        u
    }

    pub fn food_classes(self) -> &'static [&'static str] {
        match self {
            Technique::Skewer => &["banana-slice", "grape", "carrot"],
            Technique::Scoop => &["rice", "mashed-potato"],
            Technique::Twirl => &["noodles"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub action: SchemaAction,
    pub food_class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub points: Vec<TrajectoryPoint>,
}

/// Per-component spread of each mode, normalized units.
pub const MODE_SIGMA: f64 = 0.10;
pub const DEFAULT_DATASET_SIZE: usize = 500;

impl TrajectoryDataset {
    pub fn synthetic(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, MODE_SIGMA).expect("sigma is positive");
        let points = (0..n)
            .map(|_| {
                let tech = Technique::ALL[rng.random_range(0..Technique::ALL.len())];
                let center = tech.center();
                let u: [f64; SCHEMA_DIM] =
                    std::array::from_fn(|i| (center[i] + noise.sample(&mut rng)).clamp(0.0, 1.0));
                let classes = tech.food_classes();
                TrajectoryPoint {
                    action: SchemaAction::from_normalized(&u),
                    food_class: classes[rng.random_range(0..classes.len())].to_string(),
                }
            })
            .collect();
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        self.points.iter().try_for_each(|p| p.action.validate())
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("dataset serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn normalized(&self) -> Vec<[f64; SCHEMA_DIM]> {
        self.points.iter().map(|p| p.action.normalized()).collect()
    }
}
