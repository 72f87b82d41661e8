//! Bite acquisition: the schema, the synthetic expert dataset, the k-medoids
//! action library and the contextual bandit that picks among its actions.

pub mod bandit;
pub mod context;
pub mod dataset;
pub mod kmedoids;
pub mod motion;
pub mod schema;
pub mod sim;

pub use bandit::{select_action, update_bandit, BanditError, BanditState, HapticQuery};
pub use context::{
    compute_posthoc_context, haptic_features, ContextError, HapticContext, HapticNormalizer,
    VisualContext, CONTEXT_DIM, FOOD_CATALOG, HAPTIC_DIM, VISUAL_DIM,
};
pub use dataset::{TrajectoryDataset, TrajectoryPoint};
pub use kmedoids::{k_medoids, pam, ActionLibrary, DistanceMatrix, KMedoidsError, NUM_ACTIONS};
pub use schema::{SchemaAction, SchemaError, SCHEMA_DIM};
pub use sim::{simulate_acquisition, AcquisitionOutcome};

/// Exploration weight used by the feeding system.
pub const DEFAULT_ALPHA: f64 = 0.5;
